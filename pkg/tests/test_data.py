"""Dataset generation, file ingestion, batch iteration."""

import struct

import numpy as np

from adasap.config import build_config
from adasap.data import (
    epoch_batches,
    load_csv,
    load_dataset,
    load_idx,
    measurement_batches,
    synthetic_shapes,
)


def test_synthetic_shapes_contract():
    x, y = synthetic_shapes(200, seed=1)
    assert x.shape == (200, 1, 28, 28)
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert set(np.unique(y)) <= set(range(10))
    # all ten classes appear in a sample this big
    assert len(np.unique(y)) == 10


def test_synthetic_shapes_deterministic():
    x1, y1 = synthetic_shapes(50, seed=9)
    x2, y2 = synthetic_shapes(50, seed=9)
    x3, _ = synthetic_shapes(50, seed=10)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert not np.array_equal(x1, x3)


def test_classes_are_visually_distinct():
    """Mean images of different classes should differ substantially."""
    x, y = synthetic_shapes(600, seed=3)
    means = np.stack([x[y == c].mean(axis=0).ravel() for c in range(10)])
    for a in range(10):
        for b in range(a + 1, 10):
            assert np.abs(means[a] - means[b]).mean() > 0.01


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    imgs = rng.integers(0, 256, (12, 5, 5), dtype=np.uint8)
    labels = rng.integers(0, 10, 12, dtype=np.uint8)
    ip = tmp_path / "imgs-idx3-ubyte"
    lp = tmp_path / "labels-idx1-ubyte"
    ip.write_bytes(struct.pack(">IIII", 0x803, 12, 5, 5) + imgs.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, 12) + labels.tobytes())
    x, y = load_idx(ip, lp)
    assert x.shape == (12, 1, 5, 5)
    assert np.allclose(x[3, 0], imgs[3] / 255.0)
    assert np.array_equal(y, labels.astype(np.int64))


def test_csv_loader(tmp_path):
    rows = ["3," + ",".join(["128"] * 4), "7," + ",".join(["255"] * 4)]
    p = tmp_path / "d.csv"
    p.write_text("\n".join(rows))
    x, y = load_csv(p, size=2)
    assert x.shape == (2, 1, 2, 2)
    assert np.array_equal(y, [3, 7])
    assert np.allclose(x[1], 1.0)


def test_load_dataset_split_sizes():
    cfg = build_config({}, {"n_train": 256, "n_val": 64})
    xt, yt, xv, yv = load_dataset(cfg)
    assert xt.shape[0] == 256 and xv.shape[0] == 64
    assert yt.dtype == np.int64


def test_epoch_batches_shuffled_and_complete():
    rng = np.random.default_rng(0)
    batches = list(epoch_batches(100, 32, rng))
    assert len(batches) == 3  # trailing partial batch dropped
    seen = np.concatenate(batches)
    assert len(np.unique(seen)) == 96


def test_measurement_batches_fixed_and_seeded():
    x = np.arange(200, dtype=np.float64).reshape(50, 1, 2, 2)
    y = np.arange(50, dtype=np.int64)
    a = measurement_batches(x, y, 3, 8, seed=5)
    b = measurement_batches(x, y, 3, 8, seed=5)
    assert len(a) == 3 and all(xb.shape[0] == 8 for xb, _ in a)
    for (xa, ya), (xb, yb) in zip(a, b):
        assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
