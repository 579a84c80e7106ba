"""Two-pass flatness-informed training step with per-neuron perturbations.

One code path covers the whole family. The perturbation for a neuron with
gradient g, radius rho and diagonal transform t is

    eps = rho * (t^2 * g) / D,   t = 1 (identity) or |w| + eta,

with D = ||t * g||_2 by default (the feasibility-preserving choice: then
||t^-1 eps|| == rho exactly) or D = ||g||_2 in the literal variant kept for
fidelity testing. Degenerate settings recover the classics:

    rho_min == rho_max, identity t      -> per-neuron SAM
    rho_min == rho_max, abs-weight t    -> per-neuron ASAM
    rho_min <  rho_max                  -> adaptive radii from neuron scores
    rho == 0                            -> plain SGD with momentum

A step runs: backward at w, score neurons, resolve radii, perturb each
neuron, backward at w+eps, restore w bit-exactly, then one SGD-momentum +
weight-decay update using the perturbed gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .importance import RhoBounds, resolve_rho, score_partition
from .models import ParameterPartition
from .tensor import Tensor

TRANSFORMS = ("identity", "elementwise_abs_weight")
DENOMINATORS = ("transformed_grad_norm", "raw_grad_norm")


@dataclass
class PerturbationConfig:
    bounds: RhoBounds
    transform: str = "identity"
    transform_eta: float = 1e-12
    denominator: str = "transformed_grad_norm"
    adaptive: bool = False
    psi: str = "magnitude_l2"
    score_ema: float = 0.0  # 0 disables smoothing of per-step scores

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"unknown denominator {self.denominator!r}")
        if not self.adaptive and self.bounds.rho_min != self.bounds.rho_max:
            raise ValueError("non-adaptive mode requires rho_min == rho_max")
        if self.adaptive and self.bounds.rho_min <= 0:
            raise ValueError("adaptive mode requires 0 < rho_min <= rho_max")
        if self.transform_eta < 0:
            raise ValueError("transform_eta must be nonnegative")


@dataclass
class LRSchedule:
    """Cosine annealing from a peak to zero with a linear warmup ramp."""

    peak: float
    warmup_steps: int
    total_steps: int

    def lr_at(self, step: int) -> float:
        if self.total_steps <= 0:
            return self.peak
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.peak * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        return self.peak * 0.5 * (1.0 + math.cos(math.pi * progress))


class SGDMomentum:
    """SGD with classic momentum and coupled weight decay.

    v <- mu * v + (g + wd * w);  w <- w - lr * v. Velocity entries of pruned
    channels are zeroed at prune events so dead neurons receive no ghost
    updates.
    """

    def __init__(self, params: list[Tensor], schedule: LRSchedule, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.schedule = schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_count = 0
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self._index = {id(p): i for i, p in enumerate(self.params)}

    def current_lr(self) -> float:
        return self.schedule.lr_at(self.step_count)

    def zero_grad(self) -> None:
        T.zero_grads(self.params)

    def step(self) -> float:
        lr = self.current_lr()
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v
        self.step_count += 1
        return lr

    def zero_channel_state(self, p: ParameterPartition) -> None:
        c = p.channel_index
        for t in p.tensors:
            self.velocity[self._index[id(t)]][c] = 0.0


@dataclass
class StepReport:
    step: int
    loss: float
    perturbed_loss: float
    mean_rho: float
    max_rho: float
    lr: float
    diverged: bool = False
    zero_grad_partitions: int = 0
    grads_at_w: dict[str, np.ndarray] | None = None


def compute_epsilon_hat(p: ParameterPartition, grad: np.ndarray, rho_i: float,
                        cfg: PerturbationConfig) -> np.ndarray:
    """Per-neuron first-order worst-case perturbation of radius rho_i.

    Zero gradient yields a zero perturbation (nothing to ascend along).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if cfg.transform == "identity":
        t2g = grad
        tg_norm = float(np.linalg.norm(grad))
    else:
        t = np.abs(p.weight_vector()) + cfg.transform_eta
        t2g = (t * t) * grad
        tg_norm = float(np.linalg.norm(t * grad))
    if cfg.denominator == "transformed_grad_norm":
        denom = tg_norm
    else:
        denom = float(np.linalg.norm(grad))
    if denom == 0.0:
        return np.zeros_like(grad)
    return (rho_i / denom) * t2g


def loss_at_perturbation(model, batch, eps: dict[str, np.ndarray]) -> float:
    """Loss with partition perturbations applied; weights restored bit-exactly."""
    parts = {p.id: p for p in model.partitions}
    saved = [t.data.copy() for t in model.trainable_params()]
    try:
        for pid, vec in eps.items():
            parts[pid].add_(vec)
        with T.no_grad():
            value = model.loss(batch).item()
    finally:
        for t, s in zip(model.trainable_params(), saved):
            t.data[...] = s
    return value


def _partition_grads(model, batch) -> tuple[float, dict[str, np.ndarray]]:
    params = model.trainable_params()
    T.zero_grads(params)
    loss = model.loss(batch)
    T.backward(loss)
    grads = {p.id: p.grad_vector() for p in model.alive_partitions()}
    return loss.item(), grads


def adasap_step(model, batch, cfg: PerturbationConfig, opt: SGDMomentum,
                step: int = 0, score_state: dict[str, float] | None = None,
                keep_grads_at_w: bool = False) -> StepReport:
    """One training iteration: perturb per neuron, descend on the perturbed gradient."""
    params = model.trainable_params()
    alive = model.alive_partitions()

    loss0, grads = _partition_grads(model, batch)
    if not np.isfinite(loss0):
        return StepReport(step, loss0, loss0, 0.0, 0.0, opt.current_lr(), diverged=True)
    stash = {pid: g.copy() for pid, g in grads.items()} if keep_grads_at_w else None

    if cfg.adaptive:
        scores = [score_partition(p, cfg.psi, step) for p in alive]
        if cfg.score_ema > 0.0 and score_state is not None:
            for s in scores:
                prev = score_state.get(s.partition_id)
                if prev is not None:
                    s.value = cfg.score_ema * prev + (1.0 - cfg.score_ema) * s.value
                score_state[s.partition_id] = s.value
        bounds = resolve_rho(scores, cfg.bounds)
        rho_of = bounds.resolved
        rhos = np.array([rho_of[p.id] for p in alive]) if alive else np.zeros(1)
        mean_rho, max_rho = float(rhos.mean()), float(rhos.max())
    else:
        rho_of = {p.id: cfg.bounds.rho_max for p in alive}
        mean_rho = max_rho = cfg.bounds.rho_max

    if max_rho == 0.0:
        # unperturbed degenerate mode: plain SGD on the first-pass gradient
        lr = opt.step()
        return StepReport(step, loss0, loss0, 0.0, 0.0, lr, grads_at_w=stash)

    zero_eps = 0
    saved = [t.data.copy() for t in params]
    try:
        for p in alive:
            eps = compute_epsilon_hat(p, grads[p.id], rho_of[p.id], cfg)
            if not eps.any():
                zero_eps += 1
                continue
            p.add_(eps)
        T.zero_grads(params)
        loss1_t = model.loss(batch)
        loss1 = loss1_t.item()
        if not np.isfinite(loss1):
            return StepReport(step, loss0, loss1, mean_rho, max_rho, opt.current_lr(),
                              diverged=True, zero_grad_partitions=zero_eps)
        T.backward(loss1_t)
    finally:
        for t, s in zip(params, saved):
            t.data[...] = s

    lr = opt.step()
    return StepReport(step, loss0, loss1, mean_rho, max_rho, lr,
                      zero_grad_partitions=zero_eps, grads_at_w=stash)
