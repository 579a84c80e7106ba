"""Periodic rank-and-zero neuron removal with a geometric-decay schedule.

The schedule interpolates the alive-neuron count geometrically from the
dense count m down to round(k*m) over R events: counts[r] = round(m * k^(r/R)).
Each event zeroes the lowest-scored alive channels (ties broken by partition
ordinal), marks them dead, and clears their momentum so they never move
again. Every layer keeps at least one alive channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .importance import score_partition
from .models import Model


@dataclass
class PruneSchedule:
    keep_fraction: float
    total_events: int
    frequency: int
    m: int
    counts: list[int]


@dataclass
class PruneEvent:
    step: int
    event_index: int
    removed: list[str]
    criterion: str
    scores: dict[str, float]
    alive_after: int
    alive_fraction: float
    param_fraction: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "event": self.event_index,
                "removed": self.removed,
                "criterion": self.criterion,
                "scores": self.scores,
                "alive_after": self.alive_after,
                "alive_fraction": self.alive_fraction,
                "param_fraction": self.param_fraction,
            },
            sort_keys=True,
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def build_schedule(k: float, R: int, m: int, n_layers: int = 1, frequency: int = 30) -> PruneSchedule:
    """Remaining-count sequence for R prune events over m neurons, keeping k*m."""
    if not 0.0 < k < 1.0:
        raise ValueError(f"keep fraction must lie in (0, 1), got {k}")
    if R < 1:
        raise ValueError("need at least one prune event")
    if m < 2:
        raise ValueError("need at least two prunable neurons")
    target = _round_half_up(k * m)
    if target < n_layers:
        raise ValueError(
            f"target alive count {target} cannot satisfy the per-layer floor of "
            f"{n_layers} layers"
        )
    counts = [_round_half_up(m * k ** (r / R)) for r in range(R + 1)]
    counts[0] = m
    counts[-1] = target
    for r in range(1, R + 1):  # enforce monotone non-increasing after rounding
        counts[r] = min(counts[r], counts[r - 1])
    return PruneSchedule(k, R, frequency, m, counts)


def prune_step(model: Model, sched: PruneSchedule, r: int, phi: str,
               grads: dict[str, np.ndarray] | None = None, opt=None, step: int = 0) -> PruneEvent:
    """Apply prune event r (1-based): zero and mask the lowest-scored channels."""
    if not 1 <= r <= sched.total_events:
        raise ValueError(f"event index {r} outside schedule of {sched.total_events}")
    alive = [p for p in model.prunable_partitions() if p.alive]
    expected = sched.counts[r - 1]
    if len(alive) != expected:
        raise RuntimeError(
            f"prune event {r}: expected {expected} alive prunable partitions, found {len(alive)}"
        )
    n_remove = sched.counts[r - 1] - sched.counts[r]
    scores = {}
    for p in alive:
        if phi == "taylor" and grads is not None:
            vec = grads.get(p.id)
            if vec is None:
                raise ValueError(f"taylor pruning: no gradient provided for {p.id}")
            inner = float(np.dot(vec, p.weight_vector()))
            scores[p.id] = inner * inner
        else:
            scores[p.id] = score_partition(p, phi).value

    order = sorted(range(len(alive)), key=lambda i: (scores[alive[i].id], i))
    layer_alive = {l.name: int((l.mask != 0.0).sum()) for l in model.param_layers if l.prunable}
    removed = []
    for i in order:
        if len(removed) == n_remove:
            break
        p = alive[i]
        if layer_alive[p.layer.name] <= 1:
            continue  # per-layer floor: never empty a layer
        removed.append(p)
        layer_alive[p.layer.name] -= 1
    if len(removed) < n_remove:
        raise RuntimeError(
            f"prune event {r}: only {len(removed)} of {n_remove} removals possible "
            "under the per-layer floor"
        )
    for p in removed:
        p.zero_()
        p.layer.kill_channel(p.channel_index)
        if opt is not None:
            opt.zero_channel_state(p)

    alive_fraction, param_fraction = sparsity_report(model)
    return PruneEvent(
        step=step,
        event_index=r,
        removed=[p.id for p in removed],
        criterion=phi,
        scores={p.id: scores[p.id] for p in removed},
        alive_after=sched.counts[r],
        alive_fraction=alive_fraction,
        param_fraction=param_fraction,
    )


def sparsity_report(model: Model) -> tuple[float, float]:
    """(alive prunable fraction, physically-reduced parameter fraction)."""
    prunable = model.prunable_partitions()
    alive = sum(1 for p in prunable if p.alive)
    alive_fraction = alive / len(prunable) if prunable else 1.0
    param_fraction = model.structural_param_count() / model.structural_param_count(dense=True)
    return alive_fraction, param_fraction


def append_event(path, event: PruneEvent) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(event.to_json() + "\n")
