"""Representation-similarity tests: HSIC oracle, CKA invariances, exports."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedscope.cka import (
    CkaAccumulator,
    CkaMatrix,
    build_probe_minibatches,
    cross_model_similarity,
    gram_linear,
    hsic1_unbiased,
    minibatch_cka,
    overall_similarity,
    same_layer_similarity,
)
from fedscope.data import generate_synthetic
from fedscope.models import Arch, ModelSpec, build_model
from oracles import cka_direct, hsic1_direct


def rand_acts(n, d, seed):
    return np.random.default_rng(seed).standard_normal((n, d))


# ---- HSIC estimator --------------------------------------------------------


def test_hsic_matches_direct_summation_oracle():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 13))
        k = gram_linear(rng.standard_normal((n, 3)))
        l = gram_linear(rng.standard_normal((n, 5)))
        got = hsic1_unbiased(k, l)
        want = hsic1_direct(k.tolist(), l.tolist())
        assert abs(got - want) < 1e-10


def test_hsic_accepts_generic_square_matrices():
    # the estimator is defined for any symmetric matrices, not only grams
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6))
    k = a + a.T
    got = hsic1_unbiased(k, k)
    assert abs(got - hsic1_direct(k.tolist(), k.tolist())) < 1e-10


def test_hsic_coefficient_hook_detectable_by_oracle():
    rng = np.random.default_rng(2)
    k = gram_linear(rng.standard_normal((8, 4)))
    l = gram_linear(rng.standard_normal((8, 4)))
    want = hsic1_direct(k.tolist(), l.tolist())
    assert abs(hsic1_unbiased(k, l) - want) < 1e-10
    assert abs(hsic1_unbiased(k, l, _pair_coeff=2.5) - want) > 1e-6


def test_hsic_needs_four_examples():
    k = np.eye(3)
    with pytest.raises(ValueError, match="at least 4"):
        hsic1_unbiased(k, k)
    hsic1_unbiased(np.eye(4), np.eye(4))  # boundary works


def test_hsic_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        hsic1_unbiased(np.eye(5), np.eye(4))
    with pytest.raises(ValueError):
        hsic1_unbiased(np.ones((4, 5)), np.ones((4, 5)))


def test_gram_linear_is_products():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    k = gram_linear(x)
    assert np.allclose(k, [[5.0, 11.0], [11.0, 25.0]])
    with pytest.raises(ValueError):
        gram_linear(np.ones(3))


# ---- CKA invariances -------------------------------------------------------


def test_cka_self_similarity_is_one():
    xs = [rand_acts(10, 6, s) for s in range(3)]
    assert abs(minibatch_cka(xs, xs) - 1.0) < 1e-10


def test_cka_invariant_to_orthogonal_transform():
    rng = np.random.default_rng(7)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    xs = [rand_acts(10, 6, s) for s in range(3)]
    ys = [x @ q for x in xs]
    assert abs(minibatch_cka(xs, ys) - 1.0) < 1e-8


def test_cka_invariant_to_isotropic_scaling():
    xs = [rand_acts(9, 4, s + 10) for s in range(3)]
    ys = [rand_acts(9, 5, s + 50) for s in range(3)]
    base = minibatch_cka(xs, ys)
    scaled = minibatch_cka([3.7 * x for x in xs], [0.2 * y for y in ys])
    assert abs(base - scaled) < 1e-10


def test_cka_symmetric():
    xs = [rand_acts(8, 4, s + 3) for s in range(4)]
    ys = [rand_acts(8, 7, s + 30) for s in range(4)]
    assert abs(minibatch_cka(xs, ys) - minibatch_cka(ys, xs)) < 1e-12


def test_cka_invariant_to_feature_duplication():
    xs = [rand_acts(8, 4, s) for s in range(3)]
    ys = [rand_acts(8, 3, s + 9) for s in range(3)]
    dup = [np.concatenate([y, y], axis=1) for y in ys]
    assert abs(minibatch_cka(xs, ys) - minibatch_cka(xs, dup)) < 1e-12


def test_cka_matches_full_direct_oracle():
    xs = [rand_acts(6, 3, s + 70) for s in range(2)]
    ys = [rand_acts(6, 4, s + 90) for s in range(2)]
    assert abs(minibatch_cka(xs, ys) - cka_direct(xs, ys)) < 1e-10


def test_cka_undefined_on_degenerate_activations():
    xs = [np.zeros((6, 3))]
    assert math.isnan(minibatch_cka(xs, xs))


def test_accumulator_contracts():
    acc = CkaAccumulator()
    with pytest.raises(ValueError):
        acc.finalize()
    with pytest.raises(ValueError):
        acc.update(np.ones((4, 2)), np.ones((5, 2)))
    with pytest.raises(ValueError):
        minibatch_cka([], [])


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 12), st.integers(1, 6), st.integers(1, 6),
       st.integers(0, 2 ** 31 - 1))
def test_cka_bounded_property(n, dx, dy, seed):
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal((n, dx))]
    ys = [rng.standard_normal((n, dy))]
    v = minibatch_cka(xs, ys)
    # unlike the biased estimator, this one can dip below zero, but
    # Cauchy-Schwarz still pins it inside [-1, 1]
    assert -1.0 - 1e-9 <= v <= 1.0 + 1e-9


# ---- probes ----------------------------------------------------------------


def probe_ds(per_class=30):
    return generate_synthetic(seed=4, per_class=per_class, num_classes=5,
                              image_shape=(1, 4, 4))


def test_probe_batches_stratified_and_disjoint():
    ds = probe_ds()
    batches = build_probe_minibatches(ds, seed=1, per_class=5, num_batches=4)
    assert len(batches) == 4
    seen = set()
    for idx in batches:
        assert idx.size == 25
        labs = ds.labels[idx]
        assert np.array_equal(np.bincount(labs, minlength=5), [5] * 5)
        assert not (set(idx.tolist()) & seen)
        seen |= set(idx.tolist())


def test_probe_batches_deterministic():
    ds = probe_ds()
    a = build_probe_minibatches(ds, seed=2)
    b = build_probe_minibatches(ds, seed=2)
    c = build_probe_minibatches(ds, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_probe_batches_insufficient_data_errors():
    ds = probe_ds(per_class=6)
    with pytest.raises(ValueError, match="probe"):
        build_probe_minibatches(ds, seed=0, per_class=5, num_batches=4)


def test_probe_batches_too_small_for_hsic():
    ds = generate_synthetic(seed=1, per_class=10, num_classes=2,
                            image_shape=(1, 4, 4))
    with pytest.raises(ValueError, match="at least 4"):
        build_probe_minibatches(ds, seed=0, per_class=1, num_batches=2)


# ---- model-to-model comparison ---------------------------------------------


SMALL = ModelSpec(Arch.TINY_MLP, input_shape=(1, 4, 4), hidden_dims=(12, 8),
                  projection_dim=4, num_classes=5)


def test_same_layer_similarity_identity_model():
    ds = probe_ds()
    model = build_model(SMALL, 3)
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    sims = same_layer_similarity(model, model, ds, batches)
    assert set(sims) == {"hidden_0", "hidden_1"}
    for v in sims.values():
        assert abs(v - 1.0) < 1e-10


def test_same_layer_requires_matching_capture_points():
    ds = probe_ds()
    other = build_model(ModelSpec(Arch.TINY_MLP, input_shape=(1, 4, 4),
                                  hidden_dims=(12,), projection_dim=4,
                                  num_classes=5), 0)
    model = build_model(SMALL, 3)
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    with pytest.raises(ValueError, match="capture points differ"):
        same_layer_similarity(model, other, ds, batches)


def test_cross_model_similarity_diagonal_dominates_for_same_model():
    ds = probe_ds()
    model = build_model(SMALL, 3)
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    mat = cross_model_similarity(model, model, ds, batches)
    assert mat.row_names == ("hidden_0", "hidden_1")
    assert mat.col_names == ("hidden_0", "hidden_1")
    assert abs(mat.values[0, 0] - 1.0) < 1e-10
    assert abs(mat.values[1, 1] - 1.0) < 1e-10
    assert mat.values[0, 1] < 1.0


def test_overall_similarity_self_list_is_symmetric_with_unit_diagonal():
    ds = probe_ds()
    models = [build_model(SMALL, s) for s in range(3)]
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    mat = overall_similarity(models, models, ds, batches)
    assert mat.row_names == ("model0", "model1", "model2")
    assert np.all(np.abs(np.diag(mat.values) - 1.0) < 1e-10)
    assert np.max(np.abs(mat.values - mat.values.T)) < 1e-10


def test_overall_similarity_row_permutation_equivariance():
    ds = probe_ds()
    models = [build_model(SMALL, s) for s in range(3)]
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    base = overall_similarity(models, models, ds, batches)
    perm = overall_similarity([models[2], models[0], models[1]], models,
                              ds, batches)
    assert np.array_equal(perm.values, base.values[[2, 0, 1]])


def test_overall_similarity_separates_independent_inits():
    ds = probe_ds()
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    for seed in range(5):
        a = build_model(SMALL, seed)
        b = build_model(SMALL, seed + 100)
        mat = overall_similarity([a], [b], ds, batches)
        assert mat.values[0, 0] < 0.999


def test_overall_similarity_capture_selection_and_names():
    ds = probe_ds()
    models = [build_model(SMALL, s) for s in range(2)]
    batches = build_probe_minibatches(ds, seed=5, per_class=5, num_batches=2)
    last = overall_similarity(models, models, ds, batches)
    explicit = overall_similarity(models, models, ds, batches,
                                  capture="hidden_1",
                                  row_names=("a", "b"), col_names=("a", "b"))
    assert np.array_equal(last.values, explicit.values)
    assert explicit.row_names == ("a", "b")
    with pytest.raises(ValueError, match="unknown capture point"):
        overall_similarity(models, models, ds, batches, capture="nope")
    with pytest.raises(ValueError, match="at least one model"):
        overall_similarity([], models, ds, batches)


# ---- exports ----------------------------------------------------------------


def test_csv_roundtrip_exact_including_nan():
    vals = np.array([[0.1234567890123456, float("nan")],
                     [1.0, -0.25]])
    m = CkaMatrix(("r0", "r1"), ("c0", "c1"), vals)
    back = CkaMatrix.from_csv(m.to_csv())
    assert back.row_names == m.row_names
    assert back.col_names == m.col_names
    assert back.values.tobytes() == m.values.tobytes()


def test_csv_rejects_ragged_rows():
    with pytest.raises(ValueError, match="cells"):
        CkaMatrix.from_csv(",a,b\nr,1.0\n")


def test_matrix_name_validation():
    with pytest.raises(ValueError, match="','"):
        CkaMatrix(("a,b",), ("c",), np.zeros((1, 1)))


def test_pgm_format_and_brightness():
    m = CkaMatrix(("r0", "r1"), ("c0", "c1", "c2"),
                  np.array([[0.0, 0.5, 1.0], [float("nan"), -3.0, 9.0]]))
    blob = m.to_pgm()
    assert blob.startswith(b"P5\n3 2\n255\n")
    pixels = np.frombuffer(blob.split(b"\n", 3)[3], dtype=np.uint8).reshape(2, 3)
    assert pixels[0, 0] == 0 and pixels[0, 2] == 255
    assert pixels[0, 1] == 128  # round(0.5*255)
    assert pixels[1, 0] == 0    # NaN renders black
    assert pixels[1, 1] == 0 and pixels[1, 2] == 255  # clamped
