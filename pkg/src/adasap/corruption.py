"""Desk-scale corrupted-evaluation suite and robustness ratios.

Six corruption kinds, five severities each, with fixed constant tables so
results are comparable run to run. Severity 0 is the identity for every
kind. Corruptions apply at evaluation time only and never mutate their
input; noise kinds are deterministic given the seed.

The summary metric is the robustness ratio R_C = acc_C / acc_val, where
acc_C is the uniform mean accuracy over all (kind, severity) cells.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

KINDS = ("gaussian_noise", "impulse_noise", "box_blur", "brightness", "contrast", "pixelate")

# severity 1..5 constants (index 0 = severity 1)
SEVERITY_TABLES: dict[str, tuple] = {
    "gaussian_noise": (0.04, 0.08, 0.12, 0.18, 0.26),  # additive noise std
    "impulse_noise": (0.02, 0.04, 0.07, 0.11, 0.17),  # salt/pepper pixel fraction
    "box_blur": (2, 3, 4, 5, 7),  # mean-filter kernel size
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),  # additive offset
    "contrast": (0.75, 0.55, 0.4, 0.3, 0.2),  # scale towards the image mean
    "pixelate": (2, 3, 4, 6, 8),  # square block size
}


@dataclass
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0 <= self.severity <= 5:
            raise ValueError(f"severity must be 0..5, got {self.severity}")


def _box_taps(k: int) -> np.ndarray:
    # even widths use a centred (k+1)-tap kernel with half-weight endpoints,
    # so severity stays a pure blur (no half-pixel shift) and distortion is
    # monotone in k
    if k % 2:
        return np.full(k, 1.0 / k)
    taps = np.ones(k + 1)
    taps[0] = taps[-1] = 0.5
    return taps / k


def _box_blur(img: np.ndarray, k: int) -> np.ndarray:
    taps = _box_taps(k)
    n = taps.size
    lo = n // 2
    padded = np.pad(img, ((lo, lo), (lo, lo)), mode="reflect")
    out = np.zeros_like(img)
    for u in range(n):
        for v in range(n):
            weight = taps[u] * taps[v]
            out += weight * padded[u : u + img.shape[0], v : v + img.shape[1]]
    return out


def _pixelate(img: np.ndarray, block: int) -> np.ndarray:
    h, w = img.shape
    out = np.empty_like(img)
    for i0 in range(0, h, block):
        for j0 in range(0, w, block):
            patch = img[i0 : i0 + block, j0 : j0 + block]
            out[i0 : i0 + block, j0 : j0 + block] = patch.mean()
    return out


def corrupt(image, spec: CorruptionSpec) -> np.ndarray:
    """Corrupted copy of a (H, W) or (C, H, W) image with values in [0, 1]."""
    img = image.data if isinstance(image, T.Tensor) else np.asarray(image)
    img = img.astype(np.float64, copy=True)
    if spec.severity == 0:
        return img
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W) image, got shape {img.shape}")
    level = SEVERITY_TABLES[spec.kind][spec.severity - 1]
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_noise":
        img = img + rng.normal(0.0, level, size=img.shape)
    elif spec.kind == "impulse_noise":
        hit = rng.random(img.shape) < level
        salt = rng.random(img.shape) < 0.5
        img = np.where(hit, np.where(salt, 1.0, 0.0), img)
    elif spec.kind == "box_blur":
        img = np.stack([_box_blur(ch, int(level)) for ch in img])
    elif spec.kind == "brightness":
        img = img + level
    elif spec.kind == "contrast":
        mean = img.mean()
        img = mean + level * (img - mean)
    elif spec.kind == "pixelate":
        img = np.stack([_pixelate(ch, int(level)) for ch in img])
    img = np.clip(img, 0.0, 1.0)
    return img[0] if squeeze else img


def corrupt_batch(x: np.ndarray, kind: str, severity: int, seed: int) -> np.ndarray:
    """Corrupt a (N, C, H, W) batch; image i uses seed seed + i."""
    out = np.empty_like(x, dtype=np.float64)
    for i in range(x.shape[0]):
        out[i] = corrupt(x[i], CorruptionSpec(kind, severity, seed=seed + i))
    return out


@dataclass
class RobustnessReport:
    acc_val: float
    cells: dict[tuple[str, int], float]
    acc_c: float
    r_c: float | None
    flagged: bool = False
    per_cell_counts: dict[tuple[str, int], int] = field(default_factory=dict)

    @classmethod
    def from_cells(cls, acc_val: float, cells: dict[tuple[str, int], float]) -> "RobustnessReport":
        if not cells:
            raise ValueError("robustness report needs at least one corruption cell")
        acc_c = float(np.mean([cells[key] for key in sorted(cells)]))
        if acc_val == 0.0:
            return cls(acc_val, dict(cells), acc_c, None, flagged=True)
        return cls(acc_val, dict(cells), acc_c, acc_c / acc_val)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["kind", "severity", "accuracy"])
            for (kind, sev) in sorted(self.cells):
                writer.writerow([kind, sev, repr(self.cells[(kind, sev)])])
            writer.writerow(["clean", 0, repr(self.acc_val)])
            writer.writerow(["summary_acc_c", "", repr(self.acc_c)])
            writer.writerow(["summary_r_c", "", "" if self.r_c is None else repr(self.r_c)])

    def to_json_dict(self) -> dict:
        return {
            "acc_val": self.acc_val,
            "acc_c": self.acc_c,
            "r_c": self.r_c,
            "flagged": self.flagged,
            "cells": {f"{k}:{s}": self.cells[(k, s)] for (k, s) in sorted(self.cells)},
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)


def evaluate(model, x: np.ndarray, y: np.ndarray, kinds=KINDS, severities=(1, 2, 3, 4, 5),
             seed: int = 0, batch_size: int = 256) -> RobustnessReport:
    """Clean and per-(kind, severity) accuracy plus the robustness ratio."""
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    acc_val = model.accuracy(x, y, batch_size)
    cells: dict[tuple[str, int], float] = {}
    for ki, kind in enumerate(kinds):
        for severity in severities:
            cell_seed = seed * 1_000_003 + ki * 7919 + severity * 101
            xc = corrupt_batch(x, kind, severity, cell_seed)
            cells[(kind, severity)] = model.accuracy(xc, y, batch_size)
    return RobustnessReport.from_cells(acc_val, cells)
