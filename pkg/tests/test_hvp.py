"""Hessian-vector products: quadratic examples and the dense-matrix oracle."""

import numpy as np
import pytest

from adasap import tensor as T
from adasap.tensor import ShapeError, Tensor, hessian_vector_product


def _quadratic(a_matrix):
    """L(w) = 0.5 w^T A w as an engine closure; returns (loss_fn, params)."""
    n = a_matrix.shape[0]
    w = Tensor(np.zeros(n), requires_grad=True)
    a_t = Tensor(a_matrix)

    def loss_fn():
        col = T.reshape(w, (n, 1))
        return T.mul(T.tsum(T.mul(T.matmul(a_t, col), col)), 0.5)

    return loss_fn, [w]


def test_diag_quadratic_e1():
    loss_fn, params = _quadratic(np.diag([2.0, 5.0]))
    params[0].data[:] = [1.0, -1.0]
    hv, meta = hessian_vector_product(loss_fn, params, [np.array([1.0, 0.0])])
    assert np.allclose(hv[0], [2.0, 0.0], atol=1e-9)
    assert meta["mode"] == "grad_central_difference"


def test_diag_quadratic_e2():
    loss_fn, params = _quadratic(np.diag([2.0, 5.0]))
    hv, _ = hessian_vector_product(loss_fn, params, [np.array([0.0, 1.0])])
    assert np.allclose(hv[0], [0.0, 5.0], atol=1e-9)


def test_random_quadratic_matches_direct_multiply():
    rng = np.random.default_rng(11)
    for _ in range(20):
        b = rng.standard_normal((4, 4))
        a = (b + b.T) / 2.0
        loss_fn, params = _quadratic(a)
        params[0].data[:] = rng.standard_normal(4)
        v = rng.standard_normal(4)
        hv, _ = hessian_vector_product(loss_fn, params, [v])
        assert np.max(np.abs(hv[0] - a @ v)) < 1e-6


def test_shape_mismatch_rejected():
    loss_fn, params = _quadratic(np.eye(3))
    with pytest.raises(ShapeError):
        hessian_vector_product(loss_fn, params, [np.zeros(4)])


def test_zero_direction_gives_zero():
    loss_fn, params = _quadratic(np.eye(3))
    hv, meta = hessian_vector_product(loss_fn, params, [np.zeros(3)])
    assert np.array_equal(hv[0], np.zeros(3))


def test_weights_restored_bitwise():
    loss_fn, params = _quadratic(np.diag([1.0, 3.0]))
    params[0].data[:] = [0.123456789, -9.87654321]
    before = params[0].data.copy()
    hessian_vector_product(loss_fn, params, [np.ones(2)])
    assert np.array_equal(params[0].data, before)


def test_step_formula_recorded():
    loss_fn, params = _quadratic(np.eye(2))
    params[0].data[:] = [3.0, 4.0]  # ||w|| = 5
    v = np.array([2.0, 0.0])  # ||v|| = 2
    _, meta = hessian_vector_product(loss_fn, params, [v])
    assert abs(meta["h"] - 1e-3 * (1.0 + 5.0 / 2.0)) < 1e-15
