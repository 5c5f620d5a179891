"""JSON-lines utterance manifests and the stratified validation split."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "val", "eval")


@dataclass(frozen=True)
class Record:
    path: str
    duration_s: float
    label: str
    split: str = "train"

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"{self.path}: duration must be positive")
        if self.split not in SPLITS:
            raise ValueError(f"{self.path}: unknown split {self.split!r}")


def write_manifest(records: Iterable[Record], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = asdict(r)
            row["duration_s"] = round(row["duration_s"], 6)
            fh.write(json.dumps(row) + "\n")
    return path


def read_manifest(path) -> list[Record]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append(Record(row["path"], float(row["duration_s"]), row["label"], row.get("split", "train")))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: bad manifest record ({exc})") from exc
    return records


def labels_of(records: Iterable[Record]) -> list[str]:
    return sorted({r.label for r in records})


def select(records: Iterable[Record], split=None, labels=None) -> list[Record]:
    keep = set(labels) if labels is not None else None
    return [
        r for r in records
        if (split is None or r.split == split) and (keep is None or r.label in keep)
    ]


def stratified_split(records: Sequence[Record], ratio: float = 0.10,
                     seed: int = 0) -> tuple[list[Record], list[Record]]:
    """Move ``round(ratio * n_class)`` (at least one) records of every class to validation.

    Returns ``(train, val)`` with split tags rewritten; original order is kept
    within each output.
    """
    by_label = defaultdict(list)
    for i, r in enumerate(records):
        by_label[r.label].append(i)
    small = sorted(lab for lab, idx in by_label.items() if len(idx) < 2)
    if small:
        raise ValueError(f"classes with fewer than 2 utterances cannot be split: {', '.join(small)}")

    rng = np.random.default_rng(seed)
    val_idx = set()
    for label in sorted(by_label):
        idx = by_label[label]
        n_val = max(1, int(math.floor(ratio * len(idx) + 0.5)))
        val_idx.update(idx[j] for j in rng.permutation(len(idx))[:n_val])

    train = [replace(r, split="train") for i, r in enumerate(records) if i not in val_idx]
    val = [replace(r, split="val") for i, r in enumerate(records) if i in val_idx]
    return train, val
