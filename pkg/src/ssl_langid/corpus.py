"""Synthetic languages: Markov chains over sinusoid-mixture phones.

Each language is a phone inventory plus a bigram transition matrix. Languages
in a confusable pair share their inventory and (uniform) phone frequencies and
differ only in phonotactics, so they can only be told apart from sequence
statistics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, segment, write_wav
from .manifest import Record, stratified_split, write_manifest

log = logging.getLogger(__name__)

CROSSFADE_S = 0.005


@dataclass
class Phone:
    freqs: tuple[float, ...]
    amps: tuple[float, ...]
    duration_ms: tuple[float, float] = (50.0, 110.0)
    envelope: float = 0.0  # linear gain tilt across the phone, in [-1, 1]

    def to_dict(self) -> dict:
        return {"freqs": list(self.freqs), "amps": list(self.amps),
                "duration_ms": list(self.duration_ms), "envelope": self.envelope}


@dataclass
class LanguageSpec:
    language: str
    phones: list[Phone]
    transitions: np.ndarray
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        n = len(self.phones)
        if n < 2:
            raise ValueError(f"{self.language}: need at least 2 phones")
        if self.transitions.shape != (n, n):
            raise ValueError(f"{self.language}: transition matrix must be {n}x{n}")
        if np.any(self.transitions < 0) or not np.allclose(self.transitions.sum(1), 1.0, atol=1e-9):
            raise ValueError(f"{self.language}: transition rows must be distributions")
        nyquist = self.sample_rate / 2
        if any(f >= nyquist for p in self.phones for f in p.freqs):
            raise ValueError(f"{self.language}: phone frequency at or above Nyquist")

    def stationary(self) -> np.ndarray:
        n = len(self.phones)
        a = np.vstack([self.transitions.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi = np.linalg.lstsq(a, b, rcond=None)[0]
        pi = np.clip(pi, 0, None)
        return pi / pi.sum()

    def to_dict(self) -> dict:
        return {"language": self.language, "phones": [p.to_dict() for p in self.phones],
                "transitions": self.transitions.tolist(), "seed": self.seed}


def transition_tv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row total-variation distance between two transition matrices."""
    return 0.5 * np.abs(np.asarray(a) - np.asarray(b)).sum(axis=1)


def _random_phone(rng: np.random.Generator) -> Phone:
    n = int(rng.integers(2, 4))
    freqs = [rng.uniform(150, 900)] + list(rng.uniform(900, 4000, size=n - 1))
    amps = [1.0] + list(rng.uniform(0.2, 0.8, size=n - 1))
    return Phone(tuple(float(f) for f in freqs), tuple(float(a) for a in amps),
                 (50.0, 110.0), float(rng.uniform(-0.6, 0.6)))


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        p = rng.permutation(n)
        if np.all(p != np.arange(n)):
            return p


def _peaked_doubly_stochastic(n: int, rng: np.random.Generator) -> np.ndarray:
    """Mixture of three derangement matrices with one dominant path.

    Doubly stochastic, so every phone is equally frequent in the long run and
    the diagonal is zero.
    """
    w1 = rng.uniform(0.65, 0.8)
    weights = (w1, (1 - w1) * 0.75, (1 - w1) * 0.25)
    t = np.zeros((n, n))
    for w in weights:
        t[np.arange(n), _derangement(n, rng)] += w
    return t


def gen_language_set(n_languages: int, confusable_pairs: int = 0, seed: int = 0,
                     n_phones: int = 6, min_pair_tv: float = 0.3) -> list[LanguageSpec]:
    """Generate ``n_languages`` synthetic languages.

    Confusable pairs are placed last. Non-paired groups keep four private
    phones and share one phone with each ring neighbour when there are at
    least three groups; with two groups inventories are disjoint.
    """
    if n_languages < 2:
        raise ValueError("need at least 2 languages")
    if confusable_pairs < 0 or confusable_pairs > n_languages / 2:
        raise ValueError(f"confusable_pairs={confusable_pairs} exceeds n_languages/2={n_languages / 2}")
    if n_phones < 2:
        raise ValueError("need at least 2 phones per language")

    rng = np.random.default_rng(seed)
    n_single = n_languages - 2 * confusable_pairs
    n_groups = n_single + confusable_pairs
    share = n_groups >= 3 and n_phones >= 3
    n_private = n_phones - 2 if share else n_phones
    shared = [_random_phone(rng) for _ in range(n_groups)] if share else []
    inventories = []
    for g in range(n_groups):
        inv = [_random_phone(rng) for _ in range(n_private)]
        if share:
            inv += [shared[g - 1], shared[g]]
        inventories.append(inv)

    specs = []
    ids = [f"lang{i:02d}" for i in range(n_languages)]
    for g in range(n_single):
        specs.append(LanguageSpec(ids[g], inventories[g], _peaked_doubly_stochastic(n_phones, rng), seed))
    for p in range(confusable_pairs):
        inv = inventories[n_single + p]
        a = _peaked_doubly_stochastic(n_phones, rng)
        while True:
            b = _peaked_doubly_stochastic(n_phones, rng)
            if transition_tv(a, b).min() >= min_pair_tv:
                break
        first = n_single + 2 * p
        specs.append(LanguageSpec(ids[first], inv, a, seed))
        specs.append(LanguageSpec(ids[first + 1], list(inv), b, seed))
    return specs


def confusable_partners(specs: Sequence[LanguageSpec]) -> dict[str, str]:
    """Map each language to the language sharing its exact phone inventory, if any."""
    out = {}
    for a in specs:
        for b in specs:
            if a is not b and a.phones == b.phones:
                out[a.language] = b.language
    return out


def _render_phone(phone: Phone, start: int, n: int, sr: int) -> np.ndarray:
    # absolute-time phase: a phone following itself continues seamlessly
    t = (start + np.arange(n)) / sr
    x = np.zeros(n)
    for f, a in zip(phone.freqs, phone.amps):
        x += a * np.sin(2 * np.pi * f * t)
    gain = 1.0 + phone.envelope * (2.0 * np.arange(n) / max(n - 1, 1) - 1.0)
    return x * gain


def synthesize(spec: LanguageSpec, duration_s: float, rng: np.random.Generator,
               noise_db: float = -30.0, peak: float = 0.9, return_phones: bool = False):
    """Render a Markov walk over ``spec``'s phones as an exactly ``duration_s`` long waveform.

    Consecutive phones overlap by a 5 ms linear crossfade; white noise sits
    ``noise_db`` below the signal power before peak normalization.
    """
    sr = spec.sample_rate
    total = int(round(duration_s * sr))
    fade = int(round(CROSSFADE_S * sr))
    out = np.zeros(total + fade)
    ramp_in = np.linspace(0.0, 1.0, fade, endpoint=False)
    state = int(rng.choice(len(spec.phones), p=spec.stationary()))
    phones, pos = [], 0
    while pos < total:
        phone = spec.phones[state]
        n = int(round(rng.uniform(*phone.duration_ms) * sr / 1000.0)) + fade
        x = _render_phone(phone, pos, n, sr)
        x[:fade] *= ramp_in
        x[-fade:] *= ramp_in[::-1]
        end = min(pos + n, out.shape[0])
        out[pos:end] += x[:end - pos]
        phones.append(state)
        pos += n - fade
        state = int(rng.choice(len(spec.phones), p=spec.transitions[state]))
    out = out[:total]
    power = np.mean(out**2)
    out = out + rng.standard_normal(total) * np.sqrt(power * 10.0 ** (noise_db / 10.0))
    out *= peak / max(np.max(np.abs(out)), 1e-12)
    w = Waveform(out, sr)
    return (w, phones) if return_phones else w


def _synth_language(spec: LanguageSpec, index: int, seconds: float, seed: int,
                    stream: int, recording_s: float) -> list[Waveform]:
    rng = np.random.default_rng([seed, index, stream])
    out, remaining = [], seconds
    while remaining > 1e-9:
        dur = min(recording_s, remaining)
        out.append(synthesize(spec, dur, rng))
        remaining -= dur
    return out


def _random_cuts(w: Waveform, rng: np.random.Generator, lo: float, hi: float) -> list[Waveform]:
    out, pos = [], 0
    while True:
        n = int(round(rng.uniform(lo, hi) * w.sample_rate))
        if pos + n > len(w):
            break
        out.append(Waveform(w.samples[pos:pos + n], w.sample_rate))
        pos += n
    return out


def build_corpus(specs: Sequence[LanguageSpec], hours_per_language: float, out_dir,
                 seed: int = 0, eval_hours_per_language: float = 0.0, val_ratio: float = 0.1,
                 recording_s: float = 60.0, eval_duration_range: tuple[float, float] = (2.0, 12.0),
                 cycle: Sequence[float] = (4.0, 5.0, 6.0)) -> list[Record]:
    """Synthesize, segment and write a corpus; returns (and writes) its manifest.

    Training recordings are cut into ``cycle`` segments and 10% per language is
    tagged ``val``; evaluation recordings are cut at random durations so both
    length buckets are populated. Paths in the manifest are relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}") from exc

    train_records, eval_records = [], []
    for i, spec in enumerate(specs):
        segs = []
        for rec in _synth_language(spec, i, hours_per_language * 3600.0, seed, 0, recording_s):
            segs.extend(segment(rec, cycle))
        if not segs:
            raise ValueError(f"{hours_per_language * 60:g} min per language is shorter than one "
                             f"{min(cycle):g} s segment")
        for j, seg in enumerate(segs):
            rel = f"wav/{spec.language}/{spec.language}_train_{j:05d}.wav"
            _write(out_dir / rel, seg)
            train_records.append(Record(rel, seg.duration, spec.language, "train"))

        if eval_hours_per_language > 0:
            rng = np.random.default_rng([seed, i, 2])
            cuts = []
            for rec in _synth_language(spec, i, eval_hours_per_language * 3600.0, seed, 1, recording_s):
                cuts.extend(_random_cuts(rec, rng, *eval_duration_range))
            for j, seg in enumerate(cuts):
                rel = f"wav/{spec.language}/{spec.language}_eval_{j:05d}.wav"
                _write(out_dir / rel, seg)
                eval_records.append(Record(rel, seg.duration, spec.language, "eval"))

    train, val = stratified_split(train_records, val_ratio, seed)
    records = sorted(train + val, key=lambda r: (r.label, r.path)) + eval_records
    write_manifest(records, out_dir / "manifest.jsonl")
    (out_dir / "languages.json").write_text(json.dumps([s.to_dict() for s in specs], indent=1))
    log.info("wrote %d records (%d val) to %s", len(records), len(val), out_dir)
    return records


def _write(path: Path, w: Waveform):
    try:
        write_wav(path, w)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def load_language_set(path) -> list[LanguageSpec]:
    rows = json.loads(Path(path).read_text())
    return [
        LanguageSpec(r["language"],
                     [Phone(tuple(p["freqs"]), tuple(p["amps"]), tuple(p["duration_ms"]), p["envelope"])
                      for p in r["phones"]],
                     np.array(r["transitions"]), r.get("seed", 0))
        for r in rows
    ]


@dataclass
class PartitionSpec:
    seen: list[str]
    unseen: list[str]
    rest: list[str] = field(default_factory=list)


def partition(all_labels, seen_labels, unseen_labels) -> PartitionSpec:
    """Seen / unseen / rest language partitions; rest is everything not seen."""
    all_set, seen, unseen = set(all_labels), set(seen_labels), set(unseen_labels)
    if not seen <= all_set:
        raise ValueError(f"seen labels not in label set: {sorted(seen - all_set)}")
    if not unseen <= all_set:
        raise ValueError(f"unseen labels not in label set: {sorted(unseen - all_set)}")
    if seen & unseen:
        raise ValueError(f"seen and unseen overlap: {sorted(seen & unseen)}")
    return PartitionSpec(sorted(seen), sorted(unseen), sorted(all_set - seen))


def default_partition(all_labels: Sequence[str], n_unseen: int = 4) -> PartitionSpec:
    """Last ``n_unseen`` languages (the confusable pairs of a generated set) are unseen."""
    labels = sorted(all_labels)
    return partition(labels, labels[:-n_unseen], labels[-n_unseen:])
