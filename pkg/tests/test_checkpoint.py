import json
import logging
import struct

import numpy as np
import pytest
import torch

from ssl_langid.checkpoint import FORMAT_TAG, Checkpoint, average_checkpoints, module_bytes


def ckpt(value, val_loss=1.0, **shapes):
    shapes = shapes or {"a": (2, 3), "b": (4,)}
    return Checkpoint({k: np.full(s, value, dtype=np.float32) for k, s in shapes.items()},
                      {"val_loss": val_loss, "step": int(value * 10)})


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    c = Checkpoint({"encoder.w": rng.standard_normal((3, 4)).astype(np.float32),
                    "head.b": rng.standard_normal(5).astype(np.float32)}, {"step": 7})
    back = Checkpoint.load(c.save(tmp_path / "x.ckpt"))
    assert back.metadata == {"step": 7}
    for k in c.params:
        np.testing.assert_array_equal(back.params[k], c.params[k])


def test_layout_is_header_then_float32_blob():
    c = Checkpoint({"w": np.array([1.0, 2.0], dtype=np.float32)})
    raw = c.to_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n])
    assert header["format"] == FORMAT_TAG and header["version"] == 1
    assert header["tensors"]["w"] == {"shape": [2], "dtype": "float32", "offset": 0, "nbytes": 8}
    assert raw[8 + n:] == np.array([1.0, 2.0], dtype="<f4").tobytes()


def test_rejects_foreign_files():
    head = json.dumps({"format": "other"}).encode()
    with pytest.raises(ValueError, match="format"):
        Checkpoint.from_bytes(struct.pack("<Q", len(head)) + head)


def test_module_round_trip():
    torch.manual_seed(0)
    m = torch.nn.Linear(3, 2)
    c = Checkpoint.from_module(m, prefix="head.")
    other = torch.nn.Linear(3, 2)
    c.load_into(other, prefix="head.")
    assert module_bytes(other) == module_bytes(m)


def test_average_identical_is_idempotent():
    c = ckpt(1.5)
    avg = average_checkpoints([c] * 5, k=5)
    for k in c.params:
        np.testing.assert_array_equal(avg.params[k], c.params[k])


def test_average_of_two():
    avg = average_checkpoints([ckpt(1.0), ckpt(3.0)], k=2)
    np.testing.assert_array_equal(avg.params["a"], np.full((2, 3), 2.0, np.float32))


def test_average_picks_best_by_validation_loss():
    cs = [ckpt(v, val_loss=l) for v, l in [(10.0, 5.0), (1.0, 0.1), (3.0, 0.2), (100.0, 9.0)]]
    avg = average_checkpoints(cs, k=2)
    np.testing.assert_array_equal(avg.params["b"], np.full(4, 2.0, np.float32))


def test_average_fewer_than_k_warns(caplog):
    with caplog.at_level(logging.WARNING):
        avg = average_checkpoints([ckpt(1.0), ckpt(2.0)], k=5)
    assert "averaging all" in caplog.text
    np.testing.assert_array_equal(avg.params["a"], np.full((2, 3), 1.5, np.float32))


def test_average_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        average_checkpoints([ckpt(1.0), ckpt(2.0, a=(3, 3), b=(4,))], k=2)


def test_average_empty():
    with pytest.raises(ValueError):
        average_checkpoints([])


def test_average_commutes_with_name_permutation():
    rng = np.random.default_rng(3)
    cs = [Checkpoint({n: rng.standard_normal(3).astype(np.float32) for n in "xyz"}, {"val_loss": float(i)})
          for i in range(3)]
    perm = {"x": "z", "y": "x", "z": "y"}
    renamed = [Checkpoint({perm[k]: v for k, v in c.params.items()}, c.metadata) for c in cs]
    a, b = average_checkpoints(cs, k=3), average_checkpoints(renamed, k=3)
    for k, v in a.params.items():
        np.testing.assert_array_equal(b.params[perm[k]], v)
