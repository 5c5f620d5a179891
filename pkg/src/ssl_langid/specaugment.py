"""Time and frequency masking of feature matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SpecAugmentConfig:
    n_time_masks: int = 5
    max_time_width_frames: int = 24
    max_time_masked_ratio: float = 0.5
    n_freq_masks: int = 4
    freq_width_bins: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.n_time_masks, self.max_time_width_frames, self.n_freq_masks, self.freq_width_bins) < 0:
            raise ValueError("mask counts and widths must be non-negative")
        if not 0.0 <= self.max_time_masked_ratio <= 1.0:
            raise ValueError("max_time_masked_ratio must lie in [0, 1]")


def time_freq_masks(n_frames: int, n_bins: int, cfg: SpecAugmentConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw boolean time (T,) and frequency (F,) masks.

    A time mask that would push the union of masked frames above
    ``max_time_masked_ratio * n_frames`` is skipped.
    """
    time_mask = np.zeros(n_frames, dtype=bool)
    budget = cfg.max_time_masked_ratio * n_frames
    if cfg.max_time_width_frames > 0:
        for _ in range(cfg.n_time_masks):
            width = min(int(rng.integers(1, cfg.max_time_width_frames + 1)), n_frames)
            start = int(rng.integers(0, n_frames - width + 1))
            candidate = time_mask.copy()
            candidate[start:start + width] = True
            if candidate.sum() > budget:
                continue
            time_mask = candidate

    freq_mask = np.zeros(n_bins, dtype=bool)
    if cfg.freq_width_bins > 0:
        for _ in range(cfg.n_freq_masks):
            width = min(int(rng.integers(1, cfg.freq_width_bins + 1)), n_bins)
            start = int(rng.integers(0, n_bins - width + 1))
            freq_mask[start:start + width] = True
    return time_mask, freq_mask


def apply(feats: np.ndarray, cfg: SpecAugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Return a copy of ``feats`` (T, F) with masked regions set to zero."""
    if feats.size == 0:
        raise ValueError("cannot augment an empty feature matrix")
    time_mask, freq_mask = time_freq_masks(feats.shape[0], feats.shape[1], cfg, rng)
    out = feats.copy()
    out[time_mask, :] = 0.0
    out[:, freq_mask] = 0.0
    return out
