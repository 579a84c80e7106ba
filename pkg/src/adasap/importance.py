"""Neuron saliency scores and the score-to-radius mapping.

Two criteria are registered: ``magnitude_l2`` (Euclidean norm of the
channel's weights) and ``taylor`` (squared first-order loss change if the
channel were zeroed, i.e. the squared gradient/weight inner product). The
same criteria serve both roles: sizing per-neuron perturbation radii and
choosing pruning victims.

``resolve_rho`` maps scores affinely and order-reversed onto
[rho_min, rho_max]: the least important neuron gets the largest radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import ParameterPartition

CRITERIA = ("magnitude_l2", "taylor")


class MissingGradError(RuntimeError):
    """Raised when a gradient-based score is requested without gradients."""


@dataclass
class ImportanceScore:
    partition_id: str
    value: float
    criterion: str
    step: int = 0
    dead: bool = False

    def __post_init__(self):
        if not self.dead and not np.isfinite(self.value):
            raise ValueError(f"non-finite importance score for {self.partition_id}")


@dataclass
class RhoBounds:
    """Perturbation radius bounds plus the per-partition resolved radii.

    rho_min == rho_max == 0 encodes the unperturbed (plain SGD) mode;
    strict positivity is required only when the bounds feed the adaptive
    score mapping.
    """

    rho_min: float
    rho_max: float
    resolved: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.rho_min < 0 or self.rho_max < 0:
            raise ValueError("rho bounds must be nonnegative")
        if self.rho_min > self.rho_max:
            raise ValueError(f"rho_min {self.rho_min} > rho_max {self.rho_max}")

    @property
    def uniform(self) -> bool:
        return self.rho_min == self.rho_max


def score_magnitude(p: ParameterPartition, step: int = 0) -> ImportanceScore:
    if not p.alive:
        return ImportanceScore(p.id, 0.0, "magnitude_l2", step, dead=True)
    vec = p.weight_vector()
    return ImportanceScore(p.id, float(np.linalg.norm(vec)), "magnitude_l2", step)


def score_taylor(p: ParameterPartition, step: int = 0) -> ImportanceScore:
    if not p.alive:
        return ImportanceScore(p.id, 0.0, "taylor", step, dead=True)
    w, b = p.tensors
    if w.grad is None or b.grad is None:
        raise MissingGradError(f"taylor score for {p.id} needs populated gradients")
    inner = float(np.dot(p.grad_vector(), p.weight_vector()))
    return ImportanceScore(p.id, inner * inner, "taylor", step)


_SCORERS = {"magnitude_l2": score_magnitude, "taylor": score_taylor}


def score_partition(p: ParameterPartition, criterion: str, step: int = 0) -> ImportanceScore:
    try:
        return _SCORERS[criterion](p, step)
    except KeyError:
        raise ValueError(f"unknown criterion {criterion!r}; known: {CRITERIA}") from None


def score_partitions(partitions, criterion: str, step: int = 0) -> list[ImportanceScore]:
    return [score_partition(p, criterion, step) for p in partitions]


def resolve_rho(scores: list[ImportanceScore], bounds: RhoBounds) -> RhoBounds:
    """Resolve a radius per partition from the empirical score range.

    rho_i = rho_max - (s_i - s_min) / (s_max - s_min) * (rho_max - rho_min),
    with s_min/s_max taken from the scores passed in. When all scores are
    equal the mapping is undefined; every partition then gets rho_max
    (maximal flattening pressure).
    """
    if not scores:
        raise ValueError("resolve_rho needs at least one score")
    if bounds.rho_min <= 0:
        raise ValueError("adaptive rho mapping requires 0 < rho_min <= rho_max")
    values = np.array([s.value for s in scores], dtype=np.float64)
    s_min, s_max = float(values.min()), float(values.max())
    if s_max == s_min:
        resolved = {s.partition_id: bounds.rho_max for s in scores}
    else:
        span = bounds.rho_max - bounds.rho_min
        resolved = {
            s.partition_id: bounds.rho_max - (s.value - s_min) / (s_max - s_min) * span
            for s in scores
        }
    return RhoBounds(bounds.rho_min, bounds.rho_max, resolved)
