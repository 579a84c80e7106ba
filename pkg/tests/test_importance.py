"""Importance scores and the score-to-radius mapping."""

import numpy as np
import pytest

from adasap import tensor as T
from adasap.importance import (
    ImportanceScore,
    MissingGradError,
    RhoBounds,
    resolve_rho,
    score_magnitude,
    score_taylor,
)
from adasap.models import ModelSpec, build_model


def small_mlp():
    return build_model(
        ModelSpec(arch="mlp", input_shape=(4,), hidden_sizes=(3,), classes=2), seed=0
    )


def _set_partition(p, weights, bias):
    p.layer.weight.data[p.channel_index] = weights
    p.layer.bias.data[p.channel_index] = bias


def test_magnitude_pythagorean():
    model = small_mlp()
    p = model.prunable_partitions()[0]
    _set_partition(p, [3.0, 0.0, 0.0, 0.0], 4.0)
    assert score_magnitude(p).value == pytest.approx(5.0, abs=1e-12)


def test_magnitude_zero_partition():
    model = small_mlp()
    p = model.prunable_partitions()[0]
    _set_partition(p, [0.0, 0.0, 0.0, 0.0], 0.0)
    assert score_magnitude(p).value == 0.0


def test_magnitude_scaling_preserves_ranking(rng):
    model = small_mlp()
    parts = model.prunable_partitions()
    base = [score_magnitude(p).value for p in parts]
    for layer in model.param_layers:
        layer.weight.data *= 2.0
        layer.bias.data *= 2.0
    doubled = [score_magnitude(p).value for p in parts]
    assert np.allclose(doubled, [2 * b for b in base], rtol=1e-12)
    assert np.argsort(base).tolist() == np.argsort(doubled).tolist()


def test_dead_partition_scores_zero_with_flag():
    model = small_mlp()
    p = model.prunable_partitions()[1]
    p.zero_()
    p.layer.kill_channel(p.channel_index)
    s = score_magnitude(p)
    assert s.value == 0.0 and s.dead


def test_taylor_orthogonal_gradient_scores_zero():
    model = small_mlp()
    p = model.prunable_partitions()[0]
    _set_partition(p, [1.0, 0.0, 0.0, 0.0], 0.0)
    p.layer.weight.grad = np.zeros_like(p.layer.weight.data)
    p.layer.bias.grad = np.zeros_like(p.layer.bias.data)
    p.layer.weight.grad[p.channel_index] = [0.0, 1.0, 1.0, 1.0]  # orthogonal to w
    assert score_taylor(p).value == 0.0


def test_taylor_hand_arithmetic():
    model = small_mlp()
    p = model.prunable_partitions()[0]
    _set_partition(p, [1.0, 2.0, 0.0, 0.0], 0.0)
    p.layer.weight.grad = np.zeros_like(p.layer.weight.data)
    p.layer.bias.grad = np.zeros_like(p.layer.bias.data)
    p.layer.weight.grad[p.channel_index] = [0.5, 0.25, 0.0, 0.0]
    assert score_taylor(p).value == pytest.approx(1.0, abs=1e-12)  # (0.5 + 0.5)^2


def test_taylor_missing_grads_raises():
    model = small_mlp()
    with pytest.raises(MissingGradError):
        score_taylor(model.prunable_partitions()[0])


def test_taylor_matches_quadratic_loss_change():
    """On L = 0.5||w||^2, g = w, so the score is (||w_i||^2)^2; zeroing the
    neuron changes L by exactly -0.5||w_i||^2, whose squared first-order
    magnitude the score must reproduce (exact for this quadratic)."""
    model = small_mlp()
    params = model.trainable_params()
    loss = None
    for t in params:
        term = T.mul(T.tsum(T.mul(t, t)), 0.5)
        loss = term if loss is None else T.add(loss, term)
    T.backward(loss)
    for p in model.prunable_partitions():
        w = p.weight_vector()
        expected_delta = float(w @ w)  # first-order |dL| when the neuron zeroes
        got = score_taylor(p).value
        assert got == pytest.approx(expected_delta**2, rel=1e-12)


def test_rho_bounds_validation():
    with pytest.raises(ValueError):
        RhoBounds(-0.1, 1.0)
    with pytest.raises(ValueError):
        RhoBounds(2.0, 1.0)
    assert RhoBounds(0.0, 0.0).uniform


def _scores(values):
    return [ImportanceScore(f"p{i}", v, "magnitude_l2") for i, v in enumerate(values)]


def test_rho_endpoints():
    bounds = RhoBounds(0.01, 2.0)
    resolved = resolve_rho(_scores([1.0, 3.0, 5.0]), bounds).resolved
    assert resolved["p0"] == pytest.approx(2.0, abs=1e-15)   # s_min -> rho_max
    assert resolved["p2"] == pytest.approx(0.01, abs=1e-15)  # s_max -> rho_min


def test_rho_midpoint_with_standard_bounds():
    bounds = RhoBounds(0.01, 2.0)
    resolved = resolve_rho(_scores([0.0, 0.5, 1.0]), bounds).resolved
    assert resolved["p1"] == pytest.approx(2.0 - 0.5 * 1.99, abs=1e-12)  # 1.005


def test_rho_degenerate_equal_scores():
    bounds = RhoBounds(0.01, 2.0)
    resolved = resolve_rho(_scores([4.2, 4.2, 4.2]), bounds).resolved
    assert all(v == 2.0 for v in resolved.values())


def test_rho_monotone_order_reversing(rng):
    bounds = RhoBounds(0.05, 1.5)
    for _ in range(200):
        vals = rng.uniform(0, 10, size=rng.integers(2, 30))
        resolved = resolve_rho(_scores(vals), bounds).resolved
        rhos = np.array([resolved[f"p{i}"] for i in range(len(vals))])
        assert np.all(rhos >= bounds.rho_min - 1e-12)
        assert np.all(rhos <= bounds.rho_max + 1e-12)
        if vals.max() > vals.min():
            order = np.argsort(vals)
            sorted_rhos = rhos[order]
            diffs = np.diff(sorted_rhos)
            strict = np.diff(np.sort(vals)) > 0
            assert np.all(diffs[strict] < 0), "lower score must get strictly larger radius"


def test_resolve_rho_requires_positive_min():
    with pytest.raises(ValueError):
        resolve_rho(_scores([1.0, 2.0]), RhoBounds(0.0, 1.0))


def test_resolve_rho_requires_scores():
    with pytest.raises(ValueError):
        resolve_rho([], RhoBounds(0.1, 1.0))
