"""Loss-landscape flatness measurements.

Two kinds, both read-only over the model (weights restored bit-exactly):

* ``perturbation_gap`` -- max increase in loss within a global epsilon-ball
  of radius rho, approximated by projected gradient ascent started from the
  one-step normalized-gradient point.
* ``top_hessian_eigenvalue`` -- dominant Hessian eigenvalue of the mean loss
  via power iteration on Hessian-vector products.

Measurements run on a fixed batch set so readings are comparable across
phases of a run and across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import hessian_vector_product

PHASES = ("pre_prune", "post_prune", "post_finetune")


@dataclass
class SharpnessReading:
    kind: str  # "perturbation_gap" | "top_hessian_eig"
    value: float
    phase: str = ""
    rho: float = 0.0
    batches_used: int = 0
    ascent_steps: int = 0
    iterations: int = 0
    meta: dict = field(default_factory=dict)
    valid: bool = True


def _mean_loss(model, batches) -> float:
    with T.no_grad():
        return float(np.mean([model.loss(b).item() for b in batches]))


def _mean_loss_grads(model, batches, params) -> tuple[float, list[np.ndarray]]:
    T.zero_grads(params)
    total = 0.0
    for b in batches:
        loss = model.loss(b)
        T.backward(loss)
        total += loss.item()
    n = len(batches)
    grads = [
        (p.grad / n if p.grad is not None else np.zeros_like(p.data)) for p in params
    ]
    T.zero_grads(params)
    return total / n, grads


def _global_norm(vecs) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(v))) for v in vecs)))


def perturbation_gap(model, batches, rho: float, ascent_steps: int = 5,
                     phase: str = "") -> SharpnessReading:
    """max_{||eps|| <= rho} L(w + eps) - L(w), by projected gradient ascent."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if ascent_steps < 1:
        raise ValueError("need at least one ascent step")
    params = model.trainable_params()
    saved = [p.data.copy() for p in params]
    valid = True
    try:
        base, grads = _mean_loss_grads(model, batches, params)
        gnorm = _global_norm(grads)
        if gnorm == 0.0:
            eps = [np.zeros_like(p.data) for p in params]
        else:
            eps = [(rho / gnorm) * g for g in grads]
        for p, s, e in zip(params, saved, eps):
            p.data[...] = s + e
        best = _mean_loss(model, batches)
        if not np.isfinite(best):
            valid = False
        step_len = rho / 2.0
        for _ in range(ascent_steps - 1):
            if not valid:
                break
            _, grads = _mean_loss_grads(model, batches, params)
            gnorm = _global_norm(grads)
            if gnorm == 0.0:
                break
            eps = [e + step_len * (g / gnorm) for e, g in zip(eps, grads)]
            enorm = _global_norm(eps)
            if enorm > rho:
                eps = [(rho / enorm) * e for e in eps]
            for p, s, e in zip(params, saved, eps):
                p.data[...] = s + e
            found = _mean_loss(model, batches)
            if not np.isfinite(found):
                valid = False
                break
            best = max(best, found)
    finally:
        for p, s in zip(params, saved):
            p.data[...] = s
    gap = max(best - base, 0.0) if valid else float("nan")
    return SharpnessReading(
        kind="perturbation_gap",
        value=gap,
        phase=phase,
        rho=rho,
        batches_used=len(batches),
        ascent_steps=ascent_steps,
        valid=valid,
    )


def top_hessian_eigenvalue(model, batches, iters: int = 50, tol: float = 1e-3,
                           seed: int = 0, phase: str = "") -> SharpnessReading:
    """Dominant Hessian eigenvalue of the mean loss by power iteration."""
    if iters < 1:
        raise ValueError("need at least one power iteration")
    params = model.trainable_params()

    def loss_fn():
        parts = [model.loss(b) for b in batches]
        total = parts[0]
        for p in parts[1:]:
            total = T.add(total, p)
        return T.mul(total, 1.0 / len(batches))

    rng = np.random.default_rng(seed)
    v = [rng.standard_normal(p.shape).astype(np.float64) for p in params]
    vnorm = _global_norm(v)
    v = [vi / vnorm for vi in v]
    lam_prev = None
    lam = 0.0
    used = 0
    meta: dict = {}
    for it in range(iters):
        hv, meta = hessian_vector_product(loss_fn, params, v)
        lam = float(sum(np.sum(vi * hvi) for vi, hvi in zip(v, hv)))
        used = it + 1
        hnorm = _global_norm(hv)
        if hnorm == 0.0:
            lam = 0.0
            break
        v = [hvi / hnorm for hvi in hv]
        if lam_prev is not None and abs(lam - lam_prev) < tol * abs(lam):
            break
        lam_prev = lam
    return SharpnessReading(
        kind="top_hessian_eig",
        value=lam,
        phase=phase,
        batches_used=len(batches),
        iterations=used,
        meta=meta,
        valid=bool(np.isfinite(lam)),
    )


def measure_phase(model, batches, phase: str, rho: float = 0.05, ascent_steps: int = 5,
                  iters: int = 30, tol: float = 1e-3, seed: int = 0) -> list[SharpnessReading]:
    """Both sharpness kinds for one protocol phase, on the fixed batch set."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase tag {phase!r}")
    gap = perturbation_gap(model, batches, rho=rho, ascent_steps=ascent_steps, phase=phase)
    eig = top_hessian_eigenvalue(model, batches, iters=iters, tol=tol, seed=seed, phase=phase)
    return [gap, eig]
