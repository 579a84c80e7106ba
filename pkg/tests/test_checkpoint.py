"""Checkpoint format: bit-exact round trips, manifest integrity, error cases."""

import numpy as np
import pytest

from adasap.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_roundtrip_bit_exact(tmp_path, rng):
    tensors = {
        "w": rng.standard_normal((4, 7)),
        "b32": rng.standard_normal(5).astype(np.float32),
        "mask": (rng.random(6) > 0.5).astype(np.uint8),
        "steps": np.arange(9, dtype=np.int64).reshape(3, 3),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, meta={"phase": "final", "step": 123})
    loaded, meta = load_checkpoint(path)
    assert meta == {"phase": "final", "step": 123}
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        got = loaded[name]
        assert got.dtype == arr.dtype
        assert got.shape == arr.shape
        assert np.array_equal(
            got.view(np.uint8) if got.dtype != np.uint8 else got,
            arr.view(np.uint8) if arr.dtype != np.uint8 else arr,
        ), f"{name}: bytes differ after round trip"


def test_double_roundtrip_identical_file(tmp_path, rng):
    tensors = {"w": rng.standard_normal((3, 3))}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, meta={"k": 1})
    loaded, meta = load_checkpoint(p1)
    save_checkpoint(p2, loaded, meta=meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_float_nan_and_negzero_preserved(tmp_path):
    arr = np.array([np.nan, -0.0, np.inf, -np.inf, 1e-308])
    path = tmp_path / "special.ckpt"
    save_checkpoint(path, {"x": arr})
    loaded, _ = load_checkpoint(path)
    assert np.array_equal(loaded["x"].view(np.uint64), arr.view(np.uint64))


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.ckpt", {"c": np.array([1 + 2j])})
