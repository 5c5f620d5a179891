"""Waveform handling: log-mel features, waveform augmentation and segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FrontendConfig:
    sample_rate: int = SAMPLE_RATE
    n_mels: int = 80
    window_samples: int = 400
    hop_samples: int = 160
    fft_size: int = 512
    mel_low_hz: float = 0.0
    mel_high_hz: Optional[float] = None
    log_floor: float = 1e-10
    normalize: bool = True

    def __post_init__(self):
        if self.window_samples > self.fft_size:
            raise ValueError("window_samples must not exceed fft_size")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def high_hz(self) -> float:
        return self.sample_rate / 2 if self.mel_high_hz is None else self.mel_high_hz


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel filter."""
    mels = np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(cfg.high_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters of shape (n_mels, fft_size // 2 + 1), HTK mel scale, unnormalized."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(cfg.high_hz), cfg.n_mels + 2))
    bins = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (center - lo)
    falling = (hi - bins[None, :]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples: int, cfg: FrontendConfig) -> int:
    return (n_samples - cfg.window_samples) // cfg.hop_samples + 1


def _check_finite(w: Waveform):
    if not np.all(np.isfinite(w.samples)):
        raise ValueError("waveform contains non-finite samples")


def log_mel(w: Waveform, cfg: Optional[FrontendConfig] = None) -> np.ndarray:
    """Compute a (T, n_mels) log-mel feature matrix.

    Frames are cut without padding or pre-emphasis, Hann-windowed, zero-padded
    to ``fft_size`` and converted to power spectra before mel integration.
    """
    cfg = cfg or FrontendConfig()
    _check_finite(w)
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate} Hz")
    n = len(w)
    if n < cfg.window_samples:
        raise ValueError(f"waveform too short: {n} samples < window of {cfg.window_samples}")

    t = num_frames(n, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.window_samples)[:: cfg.hop_samples][:t]
    window = signal.get_window("hann", cfg.window_samples)
    power = np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    feats = np.log(np.maximum(energies, cfg.log_floor))
    if cfg.normalize:
        feats = normalize_features(feats)
    return feats


def normalize_features(feats: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    mean = feats.mean(axis=0, keepdims=True)
    std = np.maximum(feats.std(axis=0, keepdims=True), floor)
    return (feats - mean) / std


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Play ``w`` ``factor`` times faster by polyphase resampling.

    Output length is about ``len(w) / factor`` and all frequencies scale by ``factor``.
    """
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(1.0 / factor).limit_denominator(1000)
    out = signal.resample_poly(w.samples, ratio.numerator, ratio.denominator)
    return Waveform(out, w.sample_rate)


def mix_noise(w: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    if noise.sample_rate != w.sample_rate:
        raise ValueError("noise and signal sample rates differ")
    n = np.resize(noise.samples, len(w))
    p_signal = np.mean(w.samples**2)
    p_noise = np.mean(n**2)
    if p_noise == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    scale = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(w.samples + scale * n, w.sample_rate)


def apply_rir(
    w: Waveform,
    ir: Waveform,
    snr_db: Optional[float] = None,
    noise: Optional[Waveform] = None,
) -> Waveform:
    """Reverberate ``w`` with impulse response ``ir`` and optionally add noise at ``snr_db``."""
    if ir.sample_rate != w.sample_rate:
        raise ValueError(f"sample rate mismatch: signal {w.sample_rate} Hz, ir {ir.sample_rate} Hz")
    wet = signal.fftconvolve(w.samples, ir.samples, mode="full")[: len(w)]
    peak_in = np.max(np.abs(w.samples)) if len(w) else 0.0
    peak_out = np.max(np.abs(wet)) if len(wet) else 0.0
    if peak_out > 0:
        wet = wet * (peak_in / peak_out)
    out = Waveform(wet, w.sample_rate)
    if noise is not None:
        out = mix_noise(out, noise, 0.0 if snr_db is None else snr_db)
    return out


def synthetic_rir(rng: np.random.Generator, sample_rate: int = SAMPLE_RATE,
                  rt60: Optional[float] = None) -> Waveform:
    """Exponentially decaying noise tail behind a direct-path impulse."""
    if rt60 is None:
        rt60 = rng.uniform(0.1, 0.6)
    n = max(1, int(rt60 * sample_rate))
    t = np.arange(n) / sample_rate
    tail = rng.standard_normal(n) * np.exp(-6.9 * t / rt60) * 0.3
    tail[0] = 1.0
    return Waveform(tail, sample_rate)


def segment(w: Waveform, cycle: Sequence[float] = (4.0, 5.0, 6.0)) -> list[Waveform]:
    """Cut consecutive segments whose durations cycle through ``cycle`` seconds.

    A trailing remainder is kept as its own segment only if it is at least
    ``min(cycle)`` long.
    """
    lengths = [int(round(d * w.sample_rate)) for d in cycle]
    shortest = min(lengths)
    out, pos, i = [], 0, 0
    n = len(w)
    while pos < n:
        want = lengths[i % len(lengths)]
        if pos + want <= n:
            out.append(Waveform(w.samples[pos:pos + want].copy(), w.sample_rate))
            pos += want
            i += 1
            continue
        if n - pos >= shortest:
            out.append(Waveform(w.samples[pos:].copy(), w.sample_rate))
        break
    return out


def read_wav(path) -> Waveform:
    """Read mono 16-bit PCM or float32 WAV into a float waveform in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if data.ndim > 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, sr)


def write_wav(path, w: Waveform):
    """Write ``w`` as 16-bit PCM."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), w.sample_rate, pcm)


def load_rir_dir(directory) -> list[Waveform]:
    return [read_wav(p) for p in sorted(Path(directory).glob("*.wav"))]


@dataclass
class WaveAugmentConfig:
    """Waveform-level training augmentation."""

    speed_factors: Sequence[float] = (0.95, 1.0, 1.05)
    speed: bool = False
    rir: bool = False
    rir_prob: float = 0.5
    noise_snr_db: tuple[float, float] = (0.0, 30.0)
    rir_dir: Optional[str] = None
    _rirs: list = field(default_factory=list, repr=False)

    def impulse_responses(self) -> list[Waveform]:
        if self.rir_dir and not self._rirs:
            self._rirs.extend(load_rir_dir(self.rir_dir))
        return self._rirs


def augment_waveform(w: Waveform, cfg: WaveAugmentConfig, rng: np.random.Generator) -> Waveform:
    if cfg.speed:
        w = speed_perturb(w, float(rng.choice(list(cfg.speed_factors))))
    if cfg.rir and rng.random() < cfg.rir_prob:
        irs = cfg.impulse_responses()
        ir = irs[rng.integers(len(irs))] if irs else synthetic_rir(rng, w.sample_rate)
        noise = Waveform(rng.standard_normal(len(w)), w.sample_rate)
        w = apply_rir(w, ir, snr_db=rng.uniform(*cfg.noise_snr_db), noise=noise)
    return w
