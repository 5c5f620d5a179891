"""Conformer encoder with convolutional x4 subsampling, bottom-L truncation and freezing."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import torch
from torch import Tensor, nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    n_layers: int = 18
    d_model: int = 512
    n_heads: int = 8
    ff_expansion: int = 4
    conv_kernel: int = 31
    subsampling_factor: int = 4
    subsampling_channels: Optional[int] = None  # defaults to d_model
    input_dim: int = 80
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.subsampling_factor not in (1, 2, 4, 8) :
            raise ValueError("subsampling_factor must be a power of two <= 8")

    @property
    def channels(self) -> int:
        return self.subsampling_channels or self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


def _halve(n: int) -> int:
    # kernel 3, stride 2, padding 1
    return (n - 1) // 2 + 1


class ConvSubsampling(nn.Module):
    """Stack of stride-2 3x3 Conv2d + ReLU layers followed by a linear projection.

    Maps (B, T, input_dim) to (B, ceil(T / factor), d_model).
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        n_convs = int(math.log2(cfg.subsampling_factor))
        layers, in_ch, freq = [], 1, cfg.input_dim
        for _ in range(n_convs):
            layers += [nn.Conv2d(in_ch, cfg.channels, 3, stride=2, padding=1), nn.ReLU()]
            in_ch, freq = cfg.channels, _halve(freq)
        self.conv = nn.Sequential(*layers)
        self.out = nn.Linear(in_ch * freq, cfg.d_model)
        self.n_convs = n_convs

    def forward(self, x: Tensor) -> Tensor:
        x = self.conv(x.unsqueeze(1))  # (B, C, T', F')
        b, c, t, f = x.shape
        return self.out(x.transpose(1, 2).reshape(b, t, c * f))

    def output_length(self, t: int) -> int:
        for _ in range(self.n_convs):
            t = _halve(t)
        return t


def relative_positions(t: int, d_model: int, dtype=torch.float32, device=None) -> Tensor:
    """Sinusoidal encodings for relative offsets T-1, T-2, ..., -(T-1); shape (2T-1, d)."""
    pos = torch.arange(t - 1, -t, -1, dtype=dtype, device=device).unsqueeze(1)
    inv = torch.exp(torch.arange(0, d_model, 2, dtype=dtype, device=device) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(2 * t - 1, d_model, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(pos * inv)
    pe[:, 1::2] = torch.cos(pos * inv)
    return pe


class RelPositionMultiHeadAttention(nn.Module):
    """Multi-head self-attention with Transformer-XL relative position terms.

    score(i, j) = (q_i + u) . k_j + (q_i + v) . W_pos r_{i-j}
    """

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.h = n_heads
        self.d_k = d_model // n_heads
        self.linear_q = nn.Linear(d_model, d_model)
        self.linear_k = nn.Linear(d_model, d_model)
        self.linear_v = nn.Linear(d_model, d_model)
        self.linear_out = nn.Linear(d_model, d_model)
        self.linear_pos = nn.Linear(d_model, d_model, bias=False)
        self.pos_bias_u = nn.Parameter(torch.zeros(n_heads, self.d_k))
        self.pos_bias_v = nn.Parameter(torch.zeros(n_heads, self.d_k))
        nn.init.xavier_uniform_(self.pos_bias_u)
        nn.init.xavier_uniform_(self.pos_bias_v)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, pos_emb: Tensor) -> Tensor:
        b, t, _ = x.shape
        q = self.linear_q(x).view(b, t, self.h, self.d_k)
        k = self.linear_k(x).view(b, t, self.h, self.d_k).transpose(1, 2)
        v = self.linear_v(x).view(b, t, self.h, self.d_k).transpose(1, 2)
        p = self.linear_pos(pos_emb).view(-1, self.h, self.d_k).transpose(0, 1)  # (H, 2T-1, d_k)

        q_u = (q + self.pos_bias_u).transpose(1, 2)
        q_v = (q + self.pos_bias_v).transpose(1, 2)
        content = q_u @ k.transpose(-2, -1)  # (B, H, T, T)
        position = q_v @ p.transpose(-2, -1)  # (B, H, T, 2T-1)
        # column c of `position` holds offset T-1-c; pick offset i-j for each (i, j)
        i = torch.arange(t, device=x.device)
        index = (t - 1 - (i.unsqueeze(1) - i.unsqueeze(0))).expand(b, self.h, t, t)
        position = torch.gather(position, -1, index)

        attn = torch.softmax((content + position) / math.sqrt(self.d_k), dim=-1)
        out = self.dropout(attn) @ v
        return self.linear_out(out.transpose(1, 2).reshape(b, t, self.h * self.d_k))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, expansion: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.w1 = nn.Linear(d_model, d_model * expansion)
        self.w2 = nn.Linear(d_model * expansion, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        h = self.dropout(F.silu(self.w1(self.norm(x))))
        return self.dropout(self.w2(h))


class ConvModule(nn.Module):
    """Pointwise conv + GLU, depthwise conv, LayerNorm, SiLU, pointwise conv."""

    def __init__(self, d_model: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.pointwise1 = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2, groups=d_model)
        self.depth_norm = nn.LayerNorm(d_model)
        self.pointwise2 = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        h = F.glu(self.pointwise1(self.norm(x).transpose(1, 2)), dim=1)
        h = self.depthwise(h)
        h = F.silu(self.depth_norm(h.transpose(1, 2))).transpose(1, 2)
        return self.dropout(self.pointwise2(h).transpose(1, 2))


class ConformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.d_model
        self.ff1 = FeedForward(d, cfg.ff_expansion, cfg.dropout)
        self.attn_norm = nn.LayerNorm(d)
        self.attn = RelPositionMultiHeadAttention(d, cfg.n_heads, cfg.dropout)
        self.attn_dropout = nn.Dropout(cfg.dropout)
        self.conv = ConvModule(d, cfg.conv_kernel, cfg.dropout)
        self.ff2 = FeedForward(d, cfg.ff_expansion, cfg.dropout)
        self.final_norm = nn.LayerNorm(d)

    def forward(self, x: Tensor, pos_emb: Tensor) -> Tensor:
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn_dropout(self.attn(self.attn_norm(x), pos_emb))
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.final_norm(x)


class ConformerEncoder(nn.Module):
    """Subsampling frontend plus an ordered stack of Conformer blocks.

    Input is a batch of equal-length feature matrices (B, T, input_dim);
    output is (B, ceil(T / subsampling_factor), d_model).
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.frontend = ConvSubsampling(cfg)
        self.frontend_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.n_layers))
        self.frozen = False

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    def latents(self, feats: Tensor) -> Tensor:
        """Frontend output before any block (the pre-training targets)."""
        if feats.dim() == 2:
            feats = feats.unsqueeze(0)
        if feats.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"expected feature dim {self.cfg.input_dim}, got {feats.shape[-1]}")
        return self.frontend(feats)

    def encode(self, x: Tensor, return_all: bool = False):
        """Run the block stack over frontend latents ``x``."""
        pos_emb = relative_positions(x.shape[1], self.cfg.d_model, x.dtype, x.device)
        x = self.frontend_dropout(x)
        hidden = []
        for block in self.blocks:
            x = block(x, pos_emb)
            hidden.append(x)
        return hidden if return_all else x

    def forward(self, feats: Tensor, return_all: bool = False):
        return self.encode(self.latents(feats), return_all=return_all)

    def output_length(self, t: int) -> int:
        return self.frontend.output_length(t)

    def train(self, mode: bool = True):
        # frozen encoders always run deterministically
        return super().train(mode and not self.frozen)


def truncate(enc: ConformerEncoder, n_layers: int) -> ConformerEncoder:
    """Copy of ``enc`` keeping the frontend and the bottom ``n_layers`` blocks."""
    if not 1 <= n_layers <= enc.n_layers:
        raise ValueError(f"layer count {n_layers} outside 1..{enc.n_layers}")
    out = ConformerEncoder.__new__(ConformerEncoder)
    nn.Module.__init__(out)
    out.cfg = replace(enc.cfg, n_layers=n_layers)
    out.frontend = copy.deepcopy(enc.frontend)
    out.frontend_dropout = copy.deepcopy(enc.frontend_dropout)
    out.blocks = nn.ModuleList(copy.deepcopy(b) for b in enc.blocks[:n_layers])
    out.frozen = False
    set_frozen(out, enc.frozen)
    out.train(enc.training)
    return out


def set_frozen(enc: ConformerEncoder, frozen: bool = True) -> ConformerEncoder:
    enc.frozen = frozen
    for p in enc.parameters():
        p.requires_grad_(not frozen)
    if frozen:
        enc.eval()
    return enc


def count_params(enc: nn.Module, head: Optional[nn.Module] = None) -> int:
    n = sum(p.numel() for p in enc.parameters())
    if head is not None:
        n += sum(p.numel() for p in head.parameters())
    return n
