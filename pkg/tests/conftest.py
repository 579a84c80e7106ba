"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from adasap import tensor as T


def finite_difference_gradients(fn, arrays, h=1e-5):
    """Central finite differences of a scalar-valued fn(*arrays) -> float.

    Forward evaluations only; independent of the reverse-mode engine it
    checks.
    """
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(*arrays)
            flat[i] = orig - h
            f_minus = fn(*arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def reverse_mode_gradients(fn_t, arrays):
    """Gradients of a scalar Tensor-valued fn_t(*tensors) via the engine."""
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn_t(*tensors)
    T.backward(loss)
    return [t.grad.copy() for t in tensors]


def rel_error(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.max(np.abs(want))), 1e-6)
    return float(np.max(np.abs(got - want))) / denom


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20_240_817)
