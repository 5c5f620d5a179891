"""X-vector style decoder: statistics pooling, bottleneck, class projection."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

STD_FLOOR = 1e-10


@dataclass
class HeadConfig:
    n_classes: int
    bottleneck_dim: int = 256
    nonlinearity: bool = True

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be >= 1")


def stats_pool(e: Tensor, floor: float = STD_FLOOR) -> Tensor:
    """Concatenate per-dimension mean and population std over time.

    ``e`` is (T, d) or (B, T, d); the result is (2d,) or (B, 2d). The std is
    floored at ``floor`` so it stays differentiable for constant inputs.
    """
    if e.shape[-2] < 1:
        raise ValueError("cannot pool an empty sequence")
    mean = e.mean(dim=-2)
    var = ((e - mean.unsqueeze(-2)) ** 2).mean(dim=-2)
    std = var.clamp(min=floor * floor).sqrt()
    return torch.cat([mean, std], dim=-1)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """-log softmax(logits)[target], averaged over a batch when ``logits`` is 2-D."""
    target = torch.as_tensor(target, device=logits.device)
    k = logits.shape[-1]
    if torch.any((target < 0) | (target >= k)):
        raise ValueError(f"class index out of range for {k} classes: {target.tolist()}")
    shift = logits.max(dim=-1, keepdim=True).values.detach()
    z = logits - shift
    log_norm = torch.log(torch.exp(z).sum(dim=-1))
    picked = z.gather(-1, target.reshape(*z.shape[:-1], 1)).squeeze(-1)
    return (log_norm - picked).mean()


class XVectorHead(nn.Module):
    def __init__(self, d_model: int, cfg: HeadConfig):
        super().__init__()
        self.cfg = cfg
        self.bottleneck = nn.Linear(2 * d_model, cfg.bottleneck_dim)
        self.classifier = nn.Linear(cfg.bottleneck_dim, cfg.n_classes)

    def logits(self, pooled: Tensor) -> Tensor:
        if pooled.shape[-1] != self.bottleneck.in_features:
            raise ValueError(f"pooled dim {pooled.shape[-1]} != {self.bottleneck.in_features}")
        h = self.bottleneck(pooled)
        if self.cfg.nonlinearity:
            h = torch.relu(h)
        return self.classifier(h)

    def forward(self, e: Tensor) -> Tensor:
        return self.logits(stats_pool(e))


class LangIDModel(nn.Module):
    """Encoder followed by the pooling head; parameters live under ``encoder.`` and ``head.``."""

    def __init__(self, encoder: nn.Module, head: XVectorHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, feats: Tensor) -> Tensor:
        return self.head(self.encoder(feats))
