"""Tiny model zoo: MLP, residual CNN, and ViT built on the tape engine."""

from .zoo import (
    Arch,
    CapturePoint,
    Model,
    ModelSpec,
    build_model,
    forward_with_capture,
)

__all__ = [
    "Arch",
    "CapturePoint",
    "Model",
    "ModelSpec",
    "build_model",
    "forward_with_capture",
]
