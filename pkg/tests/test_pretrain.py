import math

import numpy as np
import pytest
import torch

from ssl_langid.checkpoint import module_bytes
from ssl_langid.encoder import EncoderConfig, ConformerEncoder
from ssl_langid.pretrain import (
    ContrastivePretrainer, PretrainConfig, contrastive_loss, pretrain, sample_distractors, sample_mask,
)
from helpers import random_utts, synthetic_utts, toy_encoder
from oracles import gradient_errors


def test_config_validation():
    with pytest.raises(ValueError):
        PretrainConfig(temperature=0)
    with pytest.raises(ValueError):
        PretrainConfig(n_distractors=0)
    with pytest.raises(ValueError):
        PretrainConfig(mask_start_prob=1.0)


def test_mask_forced_when_no_start_drawn(rng):
    cfg = PretrainConfig(mask_start_prob=0.0, mask_span=10)
    for _ in range(20):
        m = sample_mask(100, cfg, rng)
        idx = np.flatnonzero(m)
        assert 1 <= idx.size <= 10 and np.all(np.diff(idx) == 1)
        assert idx.size == 10 or idx[-1] == 99


def test_mask_fraction_matches_span_union_expectation():
    cfg = PretrainConfig()
    rng = np.random.default_rng(0)
    t = 200
    frac = np.mean([sample_mask(t, cfg, rng).mean() for _ in range(10000)])
    # interior frame is masked unless none of the previous `span` frames started a span
    positions = np.arange(t)
    window = np.minimum(positions + 1, cfg.mask_span)
    expected = np.mean(1 - (1 - cfg.mask_start_prob) ** window)
    assert abs(frac - expected) < 0.02
    assert abs(frac - 0.49) < 0.02


def test_mask_clipped_to_short_sequences(rng):
    cfg = PretrainConfig(mask_start_prob=0.5, mask_span=10)
    for t in (1, 3, 7):
        m = sample_mask(t, cfg, rng)
        assert m.shape == (t,) and m.any()


def test_distractors_come_from_other_masked_frames(rng):
    mask = np.zeros(30, dtype=bool)
    mask[[2, 3, 4, 20]] = True
    d = sample_distractors(mask, 50, rng)
    assert d.shape == (4, 50)
    for row, t in zip(d, [2, 3, 4, 20]):
        assert set(row) <= {2, 3, 4, 20} - {t}
    single = np.zeros(5, dtype=bool)
    single[1] = True
    assert 1 not in sample_distractors(single, 20, rng)


def test_loss_orthogonal_distractors_closed_form():
    d = 4
    c = torch.zeros(1, d, dtype=torch.float64)
    c[0, 0] = 1.0
    distractors = torch.zeros(1, 100, d, dtype=torch.float64)
    distractors[0, :, 1] = 1.0
    loss = contrastive_loss(c, c.clone(), distractors, 0.1).item()
    expected = -math.log(math.exp(10) / (math.exp(10) + 100))
    assert abs(loss - expected) < 1e-6
    assert abs(loss - 4.53e-3) < 1e-5


def test_loss_uniform_similarity_is_log_k_plus_one():
    c = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
    targets = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    distractors = torch.randn(1, 100, 2, dtype=torch.float64)
    distractors = torch.cat([distractors, torch.zeros(1, 100, 1, dtype=torch.float64)], dim=-1)
    assert abs(contrastive_loss(c, targets, distractors, 0.1).item() - math.log(101)) < 1e-6


def test_loss_rescale_invariance(rng):
    g = torch.Generator().manual_seed(0)
    c, q, dis = (torch.randn(*s, generator=g, dtype=torch.float64) for s in [(6, 8), (6, 8), (6, 5, 8)])
    base = contrastive_loss(c, q, dis, 0.1)
    for s in (1e-3, 0.5, 7.0, 1e4):
        assert abs(contrastive_loss(c * s, q * s, dis * s, 0.1).item() - base.item()) < 1e-6
    assert base.item() >= 0


def test_loss_guards_zero_vectors():
    z = torch.zeros(2, 3)
    loss = contrastive_loss(z, z, torch.zeros(2, 4, 3), 0.1)
    assert torch.isfinite(loss) and abs(loss.item() - math.log(5)) < 1e-6


def test_loss_needs_masked_positions():
    with pytest.raises(ValueError):
        contrastive_loss(torch.zeros(0, 3), torch.zeros(0, 3), torch.zeros(0, 2, 3))


def test_loss_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(3)
    c, q, dis = (torch.randn(*s, generator=g, dtype=torch.float64, requires_grad=True)
                 for s in [(5, 6), (5, 6), (5, 7, 6)])
    errs = gradient_errors(lambda: contrastive_loss(c, q, dis, 0.1), {"context": c, "targets": q, "distractors": dis})
    assert max(errs.values()) < 1e-4, errs


def test_pretrainer_gradient_matches_finite_differences():
    enc = toy_encoder(dropout=0.0).double()
    model = ContrastivePretrainer(enc).double().eval()
    x = torch.randn(1, 24, 12, dtype=torch.float64)
    cfg = PretrainConfig(n_distractors=5, detach_targets=False)
    params = {"mask_emb": model.mask_emb, "final_proj": model.final_proj.weight,
              "ff1": enc.blocks[0].ff1.w1.weight, "frontend": enc.frontend.out.weight}

    def fn():
        return model.loss(x, cfg, np.random.default_rng(0))

    errs = gradient_errors(fn, params)
    assert max(errs.values()) < 1e-4, errs


def test_targets_equal_latents_without_masking():
    enc = toy_encoder().eval()
    model = ContrastivePretrainer(enc)
    x = torch.randn(2, 40, 12)
    assert torch.equal(model.targets(x), enc.latents(x))


def test_zero_lr_leaves_encoder_unchanged(rng):
    enc = toy_encoder()
    before = module_bytes(enc)
    utts = random_utts(rng, ["a", "b"])
    result = pretrain(utts, enc, PretrainConfig(peak_lr=0.0, warmup_steps=1, total_updates=1, batch_size=2,
                                                n_distractors=5))
    assert module_bytes(enc) == before
    assert len(result.history) == 1


def test_history_checkpoint_and_mask_embedding(rng, tmp_path):
    enc = toy_encoder()
    utts = random_utts(rng, ["a", "b"])
    cfg = PretrainConfig(peak_lr=1e-2, warmup_steps=2, total_updates=6, batch_size=2, n_distractors=5,
                         checkpoint_every=3)
    torch.manual_seed(cfg.seed)
    initial_mask = ContrastivePretrainer(toy_encoder()).mask_emb.detach().numpy().copy()
    result = pretrain(utts, enc, cfg, out_dir=tmp_path)
    assert [h["update"] for h in result.history] == list(range(1, 7))
    assert len(result.checkpoints) == 2 and all(p.exists() for p in result.checkpoints)
    assert not np.allclose(result.checkpoint.params["pretrain.mask_emb"], initial_mask)
    assert set(result.checkpoint.subset("encoder.")) == set(enc.state_dict())
    log = result.write_log(tmp_path / "loss.csv").read_text().splitlines()
    assert log[0] == "update,loss,lr" and len(log) == 7


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        pretrain([], toy_encoder(), PretrainConfig())


@pytest.mark.slow
def test_toy_pretraining_reduces_loss():
    utts = synthetic_utts(n_languages=2, per_language=4, seconds=2.0)
    torch.manual_seed(0)
    enc = ConformerEncoder(EncoderConfig(n_layers=2, d_model=32, n_heads=2, conv_kernel=7,
                                         subsampling_channels=8))
    cfg = PretrainConfig(peak_lr=2e-3, warmup_steps=40, total_updates=200, batch_size=4)
    losses = [h["loss"] for h in pretrain(utts, enc, cfg).history]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
