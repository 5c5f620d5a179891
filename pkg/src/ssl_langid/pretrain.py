"""Contrastive pre-training of the encoder on masked frontend latents.

Spans of frontend latents are replaced by a learned mask embedding before the
Conformer blocks; the block output at each masked frame has to pick the
original latent out of distractors drawn from other masked frames of the same
utterance. There is no quantizer and no diversity term; targets are held
fixed (stop-gradient) by default, since a frontend trained through its own
targets collapses them.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .checkpoint import Checkpoint
from .encoder import ConformerEncoder
from .train import Utterance, length_batches, make_optimizer, noam_lr, write_csv

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-8


@dataclass
class PretrainConfig:
    mask_start_prob: float = 0.065
    mask_span: int = 10
    n_distractors: int = 100
    temperature: float = 0.1
    peak_lr: float = 1.4e-3
    warmup_steps: int = 25000
    total_updates: int = 400000
    batch_size: int = 8
    weight_decay: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.98)
    grad_clip: Optional[float] = 5.0
    detach_targets: bool = True
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.n_distractors < 1:
            raise ValueError("need at least one distractor")
        if not 0.0 <= self.mask_start_prob < 1.0:
            raise ValueError("mask_start_prob must lie in [0, 1)")
        if self.mask_span < 1:
            raise ValueError("mask_span must be >= 1")
        self.betas = tuple(self.betas)


def sample_mask(n_frames: int, cfg: PretrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Union of ``mask_span``-frame spans started at each frame with prob ``mask_start_prob``.

    Spans are clipped at the sequence end. If no frame starts a span, one
    start is drawn uniformly so the mask is never empty.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    starts = np.flatnonzero(rng.random(n_frames) < cfg.mask_start_prob)
    if starts.size == 0:
        starts = rng.integers(0, n_frames, size=1)
    mask = np.zeros(n_frames, dtype=bool)
    for s in starts:
        mask[s:s + cfg.mask_span] = True
    return mask


def cosine(a: Tensor, b: Tensor) -> Tensor:
    na = a.norm(dim=-1).clamp(min=NORM_FLOOR)
    nb = b.norm(dim=-1).clamp(min=NORM_FLOOR)
    return (a * b).sum(-1) / (na * nb)


def contrastive_loss(context: Tensor, targets: Tensor, distractors: Tensor, temperature: float = 0.1) -> Tensor:
    """Mean InfoNCE loss over masked positions.

    context, targets: (M, d); distractors: (M, K, d). The true target is
    candidate 0 of each row.
    """
    if context.shape[0] == 0:
        raise ValueError("need at least one masked position")
    candidates = torch.cat([targets.unsqueeze(1), distractors], dim=1)  # (M, K+1, d)
    sims = cosine(context.unsqueeze(1), candidates) / temperature
    return (torch.logsumexp(sims, dim=1) - sims[:, 0]).mean()


def sample_distractors(mask: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """For each masked frame, ``k`` frame indices drawn uniformly (with replacement)
    from the other masked frames; falls back to all other frames when only one
    frame is masked. Returns (M, k).
    """
    masked = np.flatnonzero(mask)
    pool = masked if masked.size > 1 else np.arange(mask.size)
    if pool.size < 2:
        raise ValueError("need at least two frames to draw distractors")
    out = np.empty((masked.size, k), dtype=np.int64)
    for row, t in enumerate(masked):
        others = pool[pool != t]
        out[row] = others[rng.integers(0, others.size, size=k)]
    return out


class ContrastivePretrainer(nn.Module):
    """Encoder plus the pre-training-only mask embedding and context projection."""

    def __init__(self, encoder: ConformerEncoder):
        super().__init__()
        d = encoder.cfg.d_model
        self.encoder = encoder
        self.mask_emb = nn.Parameter(torch.empty(d).uniform_())
        self.final_proj = nn.Linear(d, d)

    def targets(self, feats: Tensor) -> Tensor:
        """Contrastive targets: the unmasked frontend latents, (B, T', d)."""
        return self.encoder.latents(feats)

    def loss(self, feats: Tensor, cfg: PretrainConfig, rng: np.random.Generator) -> Tensor:
        latents = self.targets(feats)
        b, t, _ = latents.shape
        masks = np.stack([sample_mask(t, cfg, rng) for _ in range(b)])
        mask_t = torch.as_tensor(masks).unsqueeze(-1)
        x = torch.where(mask_t, self.mask_emb.to(latents.dtype), latents)
        context = self.final_proj(self.encoder.encode(x))
        if cfg.detach_targets:
            latents = latents.detach()

        ctx, tgt, dis = [], [], []
        for i in range(b):
            idx = np.flatnonzero(masks[i])
            d_idx = sample_distractors(masks[i], cfg.n_distractors, rng)
            ctx.append(context[i, idx])
            tgt.append(latents[i, idx])
            dis.append(latents[i][torch.as_tensor(d_idx)])
        return contrastive_loss(torch.cat(ctx), torch.cat(tgt), torch.cat(dis), cfg.temperature)


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    checkpoints: list[Path]

    def write_log(self, path) -> Path:
        return write_csv(path, self.history, ["update", "loss", "lr"])


def pretrain(utts: Sequence[Utterance], encoder: ConformerEncoder, cfg: PretrainConfig,
             out_dir=None) -> PretrainResult:
    """Run ``cfg.total_updates`` optimizer updates of contrastive pre-training.

    Labels are ignored. Returns the final checkpoint (encoder under
    ``encoder.``, pre-training parameters under ``pretrain.``) and the per-update
    loss history.
    """
    if not utts:
        raise ValueError("pre-training corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model = ContrastivePretrainer(encoder)
    dtype = next(encoder.parameters()).dtype
    model.to(dtype)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_optimizer(params, cfg.peak_lr, cfg.weight_decay, cfg.betas)
    lengths = [u.feats.shape[0] for u in utts]

    history, written = [], []
    batches: list = []
    model.train()
    for update in range(1, cfg.total_updates + 1):
        if not batches:
            batches = length_batches(lengths, cfg.batch_size, rng)
        batch = batches.pop()
        lr = noam_lr(update, cfg.warmup_steps, cfg.peak_lr)
        for g in opt.param_groups:
            g["lr"] = lr
        x = torch.as_tensor(np.stack([utts[i].feats for i in batch]), dtype=dtype)
        loss = model.loss(x, cfg, rng)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        history.append({"update": update, "loss": loss.item(), "lr": lr})
        if update % 50 == 0:
            log.info("update %d  loss %.4f  lr %.2e", update, loss.item(), lr)
        if out_dir is not None and cfg.checkpoint_every and update % cfg.checkpoint_every == 0:
            written.append(pretrain_checkpoint(model, cfg, update).save(Path(out_dir) / f"pretrain_{update:07d}.ckpt"))
    return PretrainResult(pretrain_checkpoint(model, cfg, cfg.total_updates), history, written)


def pretrain_checkpoint(model: ContrastivePretrainer, cfg: PretrainConfig, step: int) -> Checkpoint:
    ckpt = Checkpoint.from_module(model.encoder, prefix="encoder.", step=step,
                                  encoder=model.encoder.cfg.to_dict(), pretrain=asdict(cfg))
    ckpt.params["pretrain.mask_emb"] = model.mask_emb.detach().float().numpy().copy()
    for name, t in model.final_proj.state_dict().items():
        ckpt.params[f"pretrain.final_proj.{name}"] = t.detach().float().numpy().copy()
    return ckpt
