"""Small fixtures shared by the training tests."""

import numpy as np
import torch

from ssl_langid.audio import Waveform, log_mel
from ssl_langid.corpus import gen_language_set, synthesize
from ssl_langid.encoder import ConformerEncoder, EncoderConfig
from ssl_langid.train import Utterance

TOY_ENC = dict(n_layers=2, d_model=16, n_heads=2, conv_kernel=5, input_dim=12, subsampling_channels=4)


def toy_encoder(seed=0, **kw) -> ConformerEncoder:
    torch.manual_seed(seed)
    return ConformerEncoder(EncoderConfig(**{**TOY_ENC, **kw}))


def random_utts(rng, labels, n_per_label=4, frames=(24, 32), dim=12, shift=1.0):
    """Gaussian feature matrices with a per-label mean offset."""
    out = []
    for li, lab in enumerate(labels):
        for j in range(n_per_label):
            t = int(frames[j % len(frames)])
            feats = (rng.standard_normal((t, dim)) + shift * li).astype(np.float32)
            out.append(Utterance(Waveform(np.zeros(1)), feats, lab, t / 100.0, f"{lab}/{j}.wav"))
    return out


def synthetic_utts(n_languages=2, per_language=4, seconds=2.0, seed=0):
    specs = gen_language_set(n_languages, 0, seed=seed)
    rng = np.random.default_rng(seed)
    out = []
    for spec in specs:
        for j in range(per_language):
            w = synthesize(spec, seconds, rng)
            out.append(Utterance(w, log_mel(w).astype(np.float32), spec.language, seconds, f"{spec.language}/{j}.wav"))
    return out
