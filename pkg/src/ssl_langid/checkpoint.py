"""Checkpoint persistence and best-k averaging.

On-disk layout: an 8-byte little-endian header length, a UTF-8 JSON header,
then a little-endian float32 blob. The header maps every parameter name to
its shape, dtype and byte offset into the blob and carries free-form metadata.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

FORMAT_TAG = "ssl-langid-checkpoint"
FORMAT_VERSION = 1
PER_CHECKPOINT_KEYS = {"step", "epoch", "val_loss", "val_error", "averaged_from", "criterion", "k"}


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: nn.Module, prefix: str = "", **metadata) -> "Checkpoint":
        params = {
            prefix + name: t.detach().cpu().to(torch.float32).numpy().copy()
            for name, t in module.state_dict().items()
        }
        return cls(params, dict(metadata))

    def subset(self, prefix: str, strip: bool = True) -> dict[str, np.ndarray]:
        return {
            (k[len(prefix):] if strip else k): v
            for k, v in self.params.items() if k.startswith(prefix)
        }

    def load_into(self, module: nn.Module, prefix: str = "", strict: bool = True):
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.subset(prefix).items()}
        if not strict:
            own = module.state_dict()
            state = {k: v for k, v in state.items() if k in own}
        module.load_state_dict(state, strict=strict)
        return module

    def shapes(self) -> dict[str, tuple]:
        return {k: tuple(v.shape) for k, v in self.params.items()}

    def to_bytes(self) -> bytes:
        tensors, chunks, offset = {}, [], 0
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            raw = arr.tobytes()
            tensors[name] = {"shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw)}
            chunks.append(raw)
            offset += len(raw)
        header = {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "metadata": self.metadata,
            "tensors": tensors,
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        return struct.pack("<Q", len(head)) + head + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        (n,) = struct.unpack("<Q", data[:8])
        header = json.loads(data[8:8 + n].decode("utf-8"))
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"not a checkpoint (format tag {header.get('format')!r})")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        blob = memoryview(data)[8 + n:]
        params = {}
        for name, info in header["tensors"].items():
            raw = blob[info["offset"]:info["offset"] + info["nbytes"]]
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(info["shape"]).astype(np.float32)
        return cls(params, header.get("metadata", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def module_bytes(module: nn.Module) -> bytes:
    """Canonical serialization of a module's parameters, for byte-identity checks."""
    return Checkpoint.from_module(module).to_bytes()


def average_checkpoints(
    checkpoints: Sequence[Checkpoint],
    k: int = 5,
    criterion: Optional[str] = "val_loss",
) -> Checkpoint:
    """Average the ``k`` best checkpoints (lowest ``metadata[criterion]``).

    With fewer than ``k`` checkpoints all of them are averaged and a warning is
    logged. Passing ``criterion=None`` keeps the given order.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint to average")
    ranked = list(checkpoints)
    if criterion is not None:
        ranked.sort(key=lambda c: c.metadata.get(criterion, float("inf")))
    if len(ranked) < k:
        log.warning("only %d checkpoints available, averaging all of them (k=%d)", len(ranked), k)
    chosen = ranked[:k]

    shapes = chosen[0].shapes()
    for c in chosen[1:]:
        if c.shapes() != shapes:
            diff = sorted(set(c.shapes().items()) ^ set(shapes.items()))
            raise ValueError(f"checkpoint parameter shapes differ: {diff[:4]}")

    params = {}
    for name in shapes:
        acc = np.zeros(shapes[name], dtype=np.float64)
        for c in chosen:
            acc += c.params[name]
        params[name] = (acc / len(chosen)).astype(np.float32)
    # configuration shared by every constituent survives; per-checkpoint scores do not
    meta = {
        key: value for key, value in chosen[0].metadata.items()
        if key not in PER_CHECKPOINT_KEYS and all(c.metadata.get(key) == value for c in chosen)
    }
    meta |= {
        "averaged_from": [c.metadata.get("step") for c in chosen],
        "criterion": criterion,
        "k": len(chosen),
    }
    return Checkpoint(params, meta)


def load_many(paths: Iterable) -> list[Checkpoint]:
    return [Checkpoint.load(p) for p in paths]
