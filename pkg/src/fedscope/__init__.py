"""Desk-scale federated learning simulator with CKA representation analysis.

Subpackages:
    autodiff    reverse-mode tensor engine (numpy storage)
    optim       SGD-momentum and AdamW optimizers
    models      tiny model zoo (patch transformer, residual CNN, MLP)
    data        dataset ingestion (CIFAR-10 binary, synthetic blobs)
    partition   non-IID label-window partitioning (scenarios S1/S2)
    fl          federated round loop: FedAvg, MOON, FedALA
    cka         minibatch linear CKA with the unbiased HSIC estimator
    experiment  config parsing, run orchestration, CLI
"""

__version__ = "0.1.0"
