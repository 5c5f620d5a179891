"""Pseudo-phone n-gram rank profiles (out-of-place distance) as a classical LangID baseline.

Frames are vector-quantized with a k-means codebook, runs of identical
symbols are squeezed into single segments, and each language is summarised by
its most frequent symbol n-grams in rank order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

Ngram = tuple[int, ...]


@dataclass
class NgramConfig:
    k: int = 32
    top: int = 300
    orders: tuple[int, ...] = (1, 2, 3)
    max_frames: Optional[int] = 20000
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("codebook needs k >= 2")
        if self.top < 1:
            raise ValueError("top must be >= 1")
        self.orders = tuple(self.orders)


@dataclass
class QuantizerCodebook:
    centroids: np.ndarray
    inertia_history: Optional[list[float]] = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> dict:
        return {"centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, d) -> "QuantizerCodebook":
        return cls(np.asarray(d["centroids"], dtype=np.float64))


@dataclass
class NgramProfile:
    language: str
    ngrams: list[Ngram]

    def ranks(self) -> dict[Ngram, int]:
        return {g: i for i, g in enumerate(self.ngrams)}

    def __len__(self) -> int:
        return len(self.ngrams)

    def to_dict(self) -> dict:
        return {"language": self.language, "ngrams": [list(g) for g in self.ngrams]}

    @classmethod
    def from_dict(cls, d) -> "NgramProfile":
        return cls(d["language"], [tuple(g) for g in d["ngrams"]])


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (x**2).sum(1)[:, None] - 2.0 * x @ c.T + (c**2).sum(1)[None, :]


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = int(rng.integers(len(x)))
        else:
            i = int(rng.choice(len(x), p=d2 / total))
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(1))
    return np.array(centers)


def fit_codebook(features: Sequence[np.ndarray], k: int = 32, seed: int = 0, max_iter: int = 100,
                 tol: float = 1e-6, max_frames: Optional[int] = 20000) -> QuantizerCodebook:
    """k-means with k-means++ seeding over the pooled frames of ``features``.

    Stops after ``max_iter`` Lloyd iterations or once the largest centroid
    shift drops below ``tol``. At most ``max_frames`` frames (sampled with the
    same seed) are used.
    """
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    if x.shape[0] < k:
        raise ValueError(f"only {x.shape[0]} frames for a codebook of size {k}")
    if k < 2:
        raise ValueError("codebook needs k >= 2")
    rng = np.random.default_rng(seed)
    if max_frames is not None and x.shape[0] > max_frames:
        x = x[np.sort(rng.choice(x.shape[0], size=max_frames, replace=False))]

    c = _kmeans_pp(x, k, rng)
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, c)
        assign = d2.argmin(1)
        history.append(float(np.maximum(d2[np.arange(len(x)), assign], 0).sum()))
        new = c.copy()
        for j in range(k):
            members = x[assign == j]
            if len(members):
                new[j] = members.mean(0)
        shift = np.sqrt(((new - c) ** 2).sum(1)).max()
        c = new
        if shift < tol:
            break
    d2 = _sq_dists(x, c)
    history.append(float(np.maximum(d2.min(1), 0).sum()))
    return QuantizerCodebook(c, history)


def quantize(feats: np.ndarray, cb: QuantizerCodebook) -> list[int]:
    """Nearest-centroid symbol per frame with consecutive repeats collapsed."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cb.centroids.shape[1]:
        raise ValueError(f"feature dim {feats.shape[-1]} does not match codebook dim {cb.centroids.shape[1]}")
    symbols = _sq_dists(feats, cb.centroids).argmin(1)
    if symbols.size == 0:
        return []
    keep = np.ones(symbols.size, dtype=bool)
    keep[1:] = symbols[1:] != symbols[:-1]
    return symbols[keep].tolist()


def count_ngrams(symbols: Sequence[int], orders: Sequence[int] = (1, 2, 3)) -> Counter:
    counts: Counter = Counter()
    for n in orders:
        for i in range(len(symbols) - n + 1):
            counts[tuple(symbols[i:i + n])] += 1
    return counts


def profile_from_counts(language: str, counts: Mapping[Ngram, int], top: int = 300) -> NgramProfile:
    """Top-``top`` n-grams by descending count, ties broken lexicographically."""
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return NgramProfile(language, [g for g, _ in ranked[:top]])


def profile_distance(a: NgramProfile, b: NgramProfile) -> int:
    """Out-of-place distance: summed rank displacement of ``a``'s n-grams in ``b``.

    An n-gram missing from ``b`` costs ``len(b)``.
    """
    rb = b.ranks()
    penalty = len(b)
    return sum(abs(i - rb[g]) if g in rb else penalty for i, g in enumerate(a.ngrams))


def fit_profiles(features: Sequence[np.ndarray], labels: Sequence[str], cb: QuantizerCodebook,
                 top: int = 300, orders: Sequence[int] = (1, 2, 3)) -> dict[str, NgramProfile]:
    totals: dict[str, Counter] = {}
    for f, lab in zip(features, labels):
        totals.setdefault(lab, Counter()).update(count_ngrams(quantize(f, cb), orders))
    return {lab: profile_from_counts(lab, c, top) for lab, c in sorted(totals.items())}


def classify(feats: np.ndarray, cb: QuantizerCodebook, profiles: Mapping[str, NgramProfile],
             top: int = 300, orders: Sequence[int] = (1, 2, 3)) -> str:
    """Language whose profile is nearest; ties go to the lexicographically smallest id."""
    if not profiles:
        raise ValueError("no language profiles to classify against")
    utt = profile_from_counts("?", count_ngrams(quantize(feats, cb), orders), top)
    return min(sorted(profiles), key=lambda lab: profile_distance(utt, profiles[lab]))


def save_model(path, cb: QuantizerCodebook, profiles: Mapping[str, NgramProfile], **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"codebook": cb.to_dict(), "profiles": [p.to_dict() for p in profiles.values()], **meta}
    path.write_text(json.dumps(payload))
    return path


def load_model(path) -> tuple[QuantizerCodebook, dict[str, NgramProfile], dict]:
    payload = json.loads(Path(path).read_text())
    cb = QuantizerCodebook.from_dict(payload.pop("codebook"))
    profiles = {p["language"]: NgramProfile.from_dict(p) for p in payload.pop("profiles")}
    return cb, profiles, payload
