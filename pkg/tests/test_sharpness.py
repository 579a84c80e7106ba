"""Sharpness metrics against grid-search and dense-eigensolver oracles."""

import numpy as np
import pytest

from adasap import tensor as T
from adasap.models import ModelSpec, build_model
from adasap.sharpness import measure_phase, perturbation_gap, top_hessian_eigenvalue
from adasap.tensor import Tensor


class ScalarQuadratic:
    """L = 0.5 w^2 for a single scalar parameter, through the model protocol."""

    def __init__(self, w0):
        self.w = Tensor(np.array([w0]), requires_grad=True)

    def trainable_params(self):
        return [self.w]

    def loss(self, batch):
        return T.mul(T.tsum(T.mul(self.w, self.w)), 0.5)


class MatrixQuadratic:
    """L = 0.5 w^T A w through the model protocol."""

    def __init__(self, a, w0=None):
        self.a = np.asarray(a, dtype=np.float64)
        n = self.a.shape[0]
        self.w = Tensor(np.zeros(n) if w0 is None else np.asarray(w0, dtype=np.float64),
                        requires_grad=True)

    def trainable_params(self):
        return [self.w]

    def loss(self, batch):
        n = self.a.shape[0]
        col = T.reshape(self.w, (n, 1))
        return T.mul(T.tsum(T.mul(T.matmul(Tensor(self.a), col), col)), 0.5)


def small_model(seed=0):
    return build_model(
        ModelSpec(arch="mlp", input_shape=(6,), hidden_sizes=(5,), classes=3), seed=seed
    )


def small_batches(rng, n_batches=3):
    return [(rng.uniform(0, 1, (8, 6)), rng.integers(0, 3, 8)) for _ in range(n_batches)]


# ---------------------------------------------------------------------------
# perturbation gap
# ---------------------------------------------------------------------------

def test_gap_scalar_quadratic_matches_grid():
    model = ScalarQuadratic(1.0)
    # dense grid oracle over eps in [-0.1, 0.1]
    eps = np.linspace(-0.1, 0.1, 2_000_001)
    grid_gap = np.max(0.5 * (1.0 + eps) ** 2) - 0.5
    assert abs(grid_gap - 0.105) < 1e-9
    reading = perturbation_gap(model, [None], rho=0.1, ascent_steps=5)
    assert abs(reading.value - grid_gap) < 1e-6
    assert abs(reading.value - 0.105) < 1e-6


def test_gap_vanishes_as_rho_vanishes():
    # at a minimum the gap is ~0.5*lambda_max*rho^2, far below the bound
    model = MatrixQuadratic(np.diag([2.0, 5.0]))
    reading = perturbation_gap(model, [None], rho=1e-6, ascent_steps=3)
    assert 0.0 <= reading.value <= 1e-8


def test_gap_monotone_in_rho(rng):
    model = small_model(seed=2)
    batches = small_batches(rng)
    g1 = perturbation_gap(model, batches, rho=0.1, ascent_steps=5).value
    g2 = perturbation_gap(model, batches, rho=0.2, ascent_steps=5).value
    assert g2 >= g1 >= 0.0


def test_gap_never_negative_and_pure(rng):
    model = small_model(seed=3)
    batches = small_batches(rng)
    before = [p.data.copy() for p in model.trainable_params()]
    for rho in (1e-4, 0.05, 0.5):
        reading = perturbation_gap(model, batches, rho=rho, ascent_steps=4)
        assert reading.value >= 0.0
    for b, p in zip(before, model.trainable_params()):
        assert np.array_equal(b, p.data), "measurement mutated the model"


def test_gap_rejects_bad_args(rng):
    model = small_model()
    with pytest.raises(ValueError):
        perturbation_gap(model, [None], rho=0.0)
    with pytest.raises(ValueError):
        perturbation_gap(model, [None], rho=0.1, ascent_steps=0)


# ---------------------------------------------------------------------------
# top Hessian eigenvalue
# ---------------------------------------------------------------------------

def test_power_iteration_diag_quadratic():
    model = MatrixQuadratic(np.diag([2.0, 5.0]), w0=[0.3, -0.4])
    reading = top_hessian_eigenvalue(model, [None], iters=60, tol=1e-6, seed=1)
    assert abs(reading.value - 5.0) < 1e-3
    assert reading.meta["mode"] == "grad_central_difference"


def test_power_iteration_matches_dense_eigensolver(rng):
    for trial in range(10):
        n = int(rng.integers(2, 9))
        b = rng.standard_normal((n, n))
        a = (b + b.T) / 2.0
        model = MatrixQuadratic(a, w0=rng.standard_normal(n))
        reading = top_hessian_eigenvalue(model, [None], iters=800, tol=1e-9, seed=trial)
        eigs = np.linalg.eigvalsh(a)
        dominant = eigs[np.argmax(np.abs(eigs))]
        assert abs(reading.value - dominant) < 1e-3 * abs(dominant)


def test_hessian_eig_scales_with_loss(rng):
    a = np.diag([1.0, 3.0])
    base = top_hessian_eigenvalue(MatrixQuadratic(a), [None], iters=60, tol=1e-8, seed=4).value
    scaled = top_hessian_eigenvalue(
        MatrixQuadratic(4.0 * a), [None], iters=60, tol=1e-8, seed=4
    ).value
    assert abs(scaled - 4.0 * base) < 1e-3 * abs(scaled)


def test_hessian_purity_and_determinism(rng):
    model = small_model(seed=5)
    batches = small_batches(rng)
    before = [p.data.copy() for p in model.trainable_params()]
    r1 = top_hessian_eigenvalue(model, batches, iters=15, tol=1e-5, seed=9)
    r2 = top_hessian_eigenvalue(model, batches, iters=15, tol=1e-5, seed=9)
    assert r1.value == r2.value
    for b, p in zip(before, model.trainable_params()):
        assert np.array_equal(b, p.data)


# ---------------------------------------------------------------------------
# phase protocol
# ---------------------------------------------------------------------------

def test_measure_phase_tags_and_determinism(rng):
    model = small_model(seed=6)
    batches = small_batches(rng)
    readings = measure_phase(model, batches, "pre_prune", rho=0.05, ascent_steps=3,
                             iters=10, seed=3)
    kinds = {r.kind for r in readings}
    assert kinds == {"perturbation_gap", "top_hessian_eig"}
    assert all(r.phase == "pre_prune" for r in readings)
    again = measure_phase(model, batches, "pre_prune", rho=0.05, ascent_steps=3,
                          iters=10, seed=3)
    assert [r.value for r in readings] == [r.value for r in again]
    with pytest.raises(ValueError):
        measure_phase(model, batches, "mid_prune")
