"""Datasets: a built-in synthetic 10-class shapes generator plus IDX and CSV
ingestion, and deterministic batch iteration.

The synthetic set renders parametric grayscale glyphs (bars, boxes, disks,
rings, crosses, diagonals, checkerboards) with jittered geometry, intensity
and pixel noise, so runs work with zero external downloads while remaining
non-trivially learnable and corruption-sensitive.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

N_CLASSES = 10


def _draw(cls: int, size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    cx = rng.integers(size // 3, 2 * size // 3)
    cy = rng.integers(size // 3, 2 * size // 3)
    r = rng.integers(size // 5, size // 3)
    thick = max(1, size // 14)
    if cls == 0:  # filled square
        img[max(0, cy - r) : cy + r, max(0, cx - r) : cx + r] = 1.0
    elif cls == 1:  # square outline
        box = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
        inner = (np.abs(yy - cy) <= r - thick - 1) & (np.abs(xx - cx) <= r - thick - 1)
        img[box & ~inner] = 1.0
    elif cls == 2:  # filled disk
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0
    elif cls == 3:  # ring
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        img[(d2 <= r * r) & (d2 >= (r - thick - 1) ** 2)] = 1.0
    elif cls == 4:  # horizontal bar
        img[max(0, cy - thick) : cy + thick, :] = 1.0
    elif cls == 5:  # vertical bar
        img[:, max(0, cx - thick) : cx + thick] = 1.0
    elif cls == 6:  # main diagonal stroke
        img[np.abs((yy - cy) - (xx - cx)) <= thick] = 1.0
    elif cls == 7:  # anti-diagonal stroke
        img[np.abs((yy - cy) + (xx - cx)) <= thick] = 1.0
    elif cls == 8:  # plus sign
        img[max(0, cy - thick) : cy + thick, max(0, cx - r) : cx + r] = 1.0
        img[max(0, cy - r) : cy + r, max(0, cx - thick) : cx + thick] = 1.0
    else:  # checkerboard patch
        cell = max(2, size // 7)
        checker = ((yy // cell) + (xx // cell)) % 2 == 0
        window = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
        img[checker & window] = 1.0
    return img


def synthetic_shapes(n: int, seed: int, size: int = 28, noise: float = 0.15):
    """n labelled grayscale images, shape (n, 1, size, size), values in [0, 1]."""
    rng = np.random.default_rng(seed)
    x = np.empty((n, 1, size, size), dtype=np.float64)
    y = rng.integers(0, N_CLASSES, size=n).astype(np.int64)
    for i in range(n):
        img = _draw(int(y[i]), size, rng)
        intensity = rng.uniform(0.5, 1.0)
        background = rng.uniform(0.0, 0.22)
        img = background + (intensity - background) * img
        img = img + rng.normal(0.0, noise, size=img.shape)
        x[i, 0] = np.clip(img, 0.0, 1.0)
    return x, y


def load_idx(images_path, labels_path):
    """Read image/label pairs in IDX format (u8 pixels scaled to [0, 1])."""
    raw = Path(images_path).read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != 0x803:
        raise ValueError(f"{images_path}: bad IDX image magic {magic:#x}")
    x = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    x = x.astype(np.float64) / 255.0
    raw = Path(labels_path).read_bytes()
    magic, n2 = struct.unpack(">II", raw[:8])
    if magic != 0x801:
        raise ValueError(f"{labels_path}: bad IDX label magic {magic:#x}")
    if n2 != n:
        raise ValueError(f"image count {n} != label count {n2}")
    y = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    return x, y


def load_csv(path, size: int = 28):
    """Rows of ``label,p0,p1,...`` with pixels in 0..255 or already in [0, 1]."""
    table = np.loadtxt(path, delimiter=",", dtype=np.float64)
    if table.ndim == 1:
        table = table[None]
    y = table[:, 0].astype(np.int64)
    pix = table[:, 1:]
    if pix.max() > 1.0:
        pix = pix / 255.0
    n = pix.shape[0]
    return pix.reshape(n, 1, size, size), y


def load_dataset(cfg):
    """Dataset selected by config: (x_train, y_train, x_val, y_val)."""
    if cfg.dataset == "synthetic":
        total = cfg.n_train + cfg.n_val
        x, y = synthetic_shapes(total, cfg.data_seed, size=cfg.input_shape[1],
                                noise=cfg.data_noise)
    elif cfg.dataset == "idx":
        x, y = load_idx(cfg.data_path + "-images-idx3-ubyte", cfg.data_path + "-labels-idx1-ubyte")
    elif cfg.dataset == "csv":
        x, y = load_csv(cfg.data_path, size=cfg.input_shape[1])
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if len(y) < cfg.n_train + cfg.n_val:
        raise ValueError(
            f"dataset holds {len(y)} samples, need n_train+n_val = {cfg.n_train + cfg.n_val}"
        )
    order = np.random.default_rng(cfg.data_seed).permutation(len(y))
    x, y = x[order], y[order]
    xt, yt = x[: cfg.n_train], y[: cfg.n_train]
    xv = x[cfg.n_train : cfg.n_train + cfg.n_val]
    yv = y[cfg.n_train : cfg.n_train + cfg.n_val]
    return xt, yt, xv, yv


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index blocks for one epoch; trailing partial batch dropped."""
    order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def measurement_batches(x: np.ndarray, y: np.ndarray, n_batches: int, batch_size: int,
                        seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fixed seeded batch subset used for sharpness measurement."""
    rng = np.random.default_rng(seed)
    need = n_batches * batch_size
    idx = rng.permutation(len(y))
    if need > len(y):
        reps = int(np.ceil(need / len(y)))
        idx = np.concatenate([rng.permutation(len(y)) for _ in range(reps)])
    idx = idx[:need]
    return [
        (x[idx[i * batch_size : (i + 1) * batch_size]], y[idx[i * batch_size : (i + 1) * batch_size]])
        for i in range(n_batches)
    ]
