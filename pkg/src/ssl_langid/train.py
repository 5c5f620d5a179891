"""Supervised fine-tuning, frozen probing, layer sweeps and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import specaugment
from .audio import (FrontendConfig, WaveAugmentConfig, Waveform, augment_waveform, log_mel, read_wav,
                    speed_perturb)
from .checkpoint import Checkpoint, average_checkpoints
from .encoder import ConformerEncoder, count_params, set_frozen, truncate
from .head import HeadConfig, LangIDModel, XVectorHead, cross_entropy, stats_pool
from .manifest import Record

log = logging.getLogger(__name__)

DEFAULT_BUCKETS = ((0.0, 5.0), (5.0, 20.0))


@dataclass
class TrainConfig:
    epochs: int = 20
    warmup_ratio: float = 0.2
    peak_lr: float = 1e-3
    weight_decay: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.98)
    batch_size: int = 16
    freeze_encoder: bool = False
    spec_augment: bool = False
    speed: bool = False
    rir: bool = False
    rir_dir: Optional[str] = None
    keep_best: int = 5
    grad_clip: Optional[float] = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.betas = tuple(self.betas)

    @property
    def waveform_augment(self) -> bool:
        return self.speed or self.rir


def noam_lr(step: int, warmup: int, peak: float) -> float:
    """Linear warmup to ``peak`` at ``warmup`` then inverse-square-root decay."""
    step, warmup = max(step, 1), max(warmup, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


def make_optimizer(params, peak_lr: float, weight_decay: float, betas) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=peak_lr, betas=tuple(betas), eps=1e-8, weight_decay=weight_decay)


@dataclass
class Utterance:
    wave: Waveform
    feats: np.ndarray
    label: str
    duration_s: float
    path: str = ""


def load_utterances(records: Sequence[Record], root=".", frontend: Optional[FrontendConfig] = None,
                    workers: int = 1) -> list[Utterance]:
    """Read and featurize ``records``; paths are relative to ``root``. Output order follows input."""
    frontend = frontend or FrontendConfig()
    root = Path(root)

    def load(r: Record) -> Utterance:
        path = Path(r.path) if Path(r.path).is_absolute() else root / r.path
        w = read_wav(path)
        return Utterance(w, log_mel(w, frontend).astype(np.float32), r.label, r.duration_s, r.path)

    if workers <= 1:
        return [load(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(load, records))


def label_index(utts: Sequence[Utterance], classes: Sequence[str]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    unknown = sorted({u.label for u in utts} - lookup.keys())
    if unknown:
        raise ValueError(f"labels not in the model's class set: {', '.join(unknown)}")
    return np.array([lookup[u.label] for u in utts], dtype=np.int64)


def length_batches(lengths: Sequence[int], batch_size: int, rng: Optional[np.random.Generator] = None,
                   order: Optional[Sequence] = None) -> list[list[int]]:
    """Group indices into batches of equal feature length (no padding).

    Without ``rng`` the grouping is deterministic: groups are sorted by length
    and members by ``order`` (defaults to index).
    """
    groups: dict[int, list[int]] = {}
    for i, n in enumerate(lengths):
        groups.setdefault(int(n), []).append(i)
    batches = []
    for n in sorted(groups):
        idx = groups[n]
        if rng is not None:
            idx = [idx[j] for j in rng.permutation(len(idx))]
        elif order is not None:
            idx = sorted(idx, key=lambda i: order[i])
        batches += [idx[s:s + batch_size] for s in range(0, len(idx), batch_size)]
    if rng is not None:
        batches = [batches[j] for j in rng.permutation(len(batches))]
    return batches


def encoder_params(model: LangIDModel) -> Checkpoint:
    return Checkpoint.from_module(model.encoder, prefix="encoder.")


def model_checkpoint(model: LangIDModel, **metadata) -> Checkpoint:
    ckpt = Checkpoint.from_module(model, **metadata)
    ckpt.metadata.setdefault("encoder", model.encoder.cfg.to_dict())
    ckpt.metadata.setdefault("head", asdict(model.head.cfg))
    return ckpt


def build_model(encoder: ConformerEncoder, classes: Sequence[str], head_cfg: Optional[HeadConfig] = None,
                seed: int = 0) -> LangIDModel:
    head_cfg = head_cfg or HeadConfig(n_classes=len(classes))
    torch.manual_seed(seed)
    return LangIDModel(encoder, XVectorHead(encoder.cfg.d_model, head_cfg))


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def pooled_embeddings(encoder: ConformerEncoder, utts: Sequence[Utterance], batch_size: int = 32) -> torch.Tensor:
    """Stats-pooled encoder outputs for every utterance, in input order."""
    was_training = encoder.training
    encoder.eval()
    dtype = _model_dtype(encoder)
    out = [None] * len(utts)
    for batch in length_batches([u.feats.shape[0] for u in utts], batch_size):
        x = torch.as_tensor(np.stack([utts[i].feats for i in batch]), dtype=dtype)
        pooled = stats_pool(encoder(x))
        for j, i in enumerate(batch):
            out[i] = pooled[j]
    encoder.train(was_training)
    return torch.stack(out)


@torch.no_grad()
def predict(model: LangIDModel, utts: Sequence[Utterance], batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Logits for every utterance, returned as (logits, argmax predictions).

    Batches are formed deterministically from (length, path) so the result
    does not depend on the order of ``utts``.
    """
    was_training = model.training
    model.eval()
    dtype = _model_dtype(model)
    logits = [None] * len(utts)
    order = [(u.path, i) for i, u in enumerate(utts)]
    for batch in length_batches([u.feats.shape[0] for u in utts], batch_size, order=order):
        x = torch.as_tensor(np.stack([utts[i].feats for i in batch]), dtype=dtype)
        out = model(x)
        for j, i in enumerate(batch):
            logits[i] = out[j].double().numpy()
    model.train(was_training)
    logits = np.stack(logits)
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return logits, np.argmax(logits, axis=1)


@dataclass
class EvalReport:
    overall_error: float
    n: int
    buckets: dict[str, tuple[int, Optional[float]]]
    confusion: np.ndarray
    classes: list[str]
    n_over_20s: int = 0
    loss: float = float("nan")

    def rows(self) -> list[dict]:
        rows = [{"bucket": "overall", "n": self.n, "error_pct": f"{self.overall_error:.4f}"}]
        for name, (n, err) in self.buckets.items():
            rows.append({"bucket": name, "n": n, "error_pct": "N/A" if err is None else f"{err:.4f}"})
        return rows

    def write_csv(self, path) -> Path:
        return write_csv(path, self.rows(), ["bucket", "n", "error_pct"])

    def write_confusion(self, path) -> Path:
        rows = [{"label": c, **{o: int(v) for o, v in zip(self.classes, row)}}
                for c, row in zip(self.classes, self.confusion)]
        return write_csv(path, rows, ["label", *self.classes])


def evaluate(utts: Sequence[Utterance], model: LangIDModel, classes: Sequence[str],
             buckets: Sequence[tuple[float, float]] = DEFAULT_BUCKETS) -> EvalReport:
    """Error rates overall and by duration bucket ``(lo, hi]`` seconds."""
    targets = label_index(utts, classes)
    if len(utts) == 0:
        raise ValueError("nothing to evaluate")
    logits, preds = predict(model, utts)
    wrong = preds != targets
    lse = np.log(np.exp(logits - logits.max(1, keepdims=True)).sum(1)) + logits.max(1)
    loss = float(np.mean(lse - logits[np.arange(len(targets)), targets]))
    durations = np.array([u.duration_s for u in utts])
    table = {}
    for lo, hi in buckets:
        sel = (durations > lo) & (durations <= hi)
        n = int(sel.sum())
        table[f"{lo:g}-{hi:g}s"] = (n, float(100.0 * wrong[sel].mean()) if n else None)
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(confusion, (targets, preds), 1)
    n_long = int((durations > 20.0).sum())
    if n_long:
        log.warning("%d utterances longer than 20 s counted in the overall error only", n_long)
    return EvalReport(float(100.0 * wrong.mean()), len(utts), table, confusion, list(classes), n_long, loss)


@dataclass
class FinetuneResult:
    best: Checkpoint
    history: list[dict]
    top: list[Checkpoint]
    best_val_error: float
    best_val_loss: float
    steps: int

    def averaged(self, k: int = 5) -> Checkpoint:
        return average_checkpoints(self.top, k=k)


def _augment_batch(utts: Sequence[Utterance], batch: Sequence[int], cfg: TrainConfig, wave_cfg: WaveAugmentConfig,
                   frontend: FrontendConfig, sa_cfg: specaugment.SpecAugmentConfig,
                   rng: np.random.Generator) -> np.ndarray:
    # one speed factor per batch keeps all members the same length
    factor = float(rng.choice(list(wave_cfg.speed_factors))) if cfg.speed else 1.0
    out = []
    for i in batch:
        feats = utts[i].feats
        if cfg.waveform_augment:
            w = speed_perturb(utts[i].wave, factor) if factor != 1.0 else utts[i].wave
            if cfg.rir:
                w = augment_waveform(w, replace(wave_cfg, speed=False), rng)
            feats = log_mel(w, frontend)
        if cfg.spec_augment:
            feats = specaugment.apply(feats, sa_cfg, rng)
        out.append(feats.astype(np.float32))
    return np.stack(out)


def finetune(train: Sequence[Utterance], val: Sequence[Utterance], model: LangIDModel, classes: Sequence[str],
             cfg: TrainConfig, frontend: Optional[FrontendConfig] = None,
             spec_cfg: Optional[specaugment.SpecAugmentConfig] = None, start_step: int = 0,
             on_epoch: Optional[Callable[[dict], None]] = None) -> FinetuneResult:
    """Train ``model`` with cross-entropy; the encoder is updated unless frozen.

    Every epoch is validated and checkpointed in memory; the ``keep_best``
    lowest-validation-loss checkpoints are kept for averaging. Augmentation
    touches training data only.
    """
    y_train = torch.as_tensor(label_index(train, classes))
    label_index(val, classes)
    if model.head.cfg.n_classes != len(classes):
        raise ValueError(f"head has {model.head.cfg.n_classes} classes but {len(classes)} labels were given")
    if not train or not val:
        raise ValueError("training and validation sets must be non-empty")

    frontend = frontend or FrontendConfig()
    spec_cfg = spec_cfg or specaugment.SpecAugmentConfig()
    wave_cfg = WaveAugmentConfig(speed=cfg.speed, rir=cfg.rir, rir_dir=cfg.rir_dir)
    if cfg.freeze_encoder:
        set_frozen(model.encoder, True)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    dtype = _model_dtype(model)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_optimizer(params, cfg.peak_lr, cfg.weight_decay, cfg.betas)
    lengths = [u.feats.shape[0] for u in train]
    steps_per_epoch = len(length_batches(lengths, cfg.batch_size))
    warmup = max(1, int(round(cfg.warmup_ratio * cfg.epochs * steps_per_epoch)))

    # a frozen encoder without augmentation sees identical inputs every epoch
    cached = None
    if cfg.freeze_encoder and not (cfg.spec_augment or cfg.waveform_augment):
        cached = pooled_embeddings(model.encoder, train)

    history, top = [], []
    best_err, best_loss, best = float("inf"), float("inf"), None
    step = start_step
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for batch in length_batches(lengths, cfg.batch_size, rng):
            step += 1
            lr = noam_lr(step, warmup, cfg.peak_lr)
            for g in opt.param_groups:
                g["lr"] = lr
            if cached is not None:
                logits = model.head.logits(cached[batch])
            else:
                if cfg.spec_augment or cfg.waveform_augment:
                    x = _augment_batch(train, batch, cfg, wave_cfg, frontend, spec_cfg, rng)
                else:
                    x = np.stack([train[i].feats for i in batch])
                logits = model(torch.as_tensor(x, dtype=dtype))
            loss = cross_entropy(logits, y_train[batch])
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)

        report = evaluate(val, model, classes)
        row = {"epoch": epoch, "train_loss": total / count, "val_loss": report.loss,
               "val_error": report.overall_error, "lr": lr, "step": step}
        history.append(row)
        if on_epoch:
            on_epoch(row)
        log.info("epoch %d  train %.4f  val loss %.4f  val err %.2f%%", epoch, row["train_loss"],
                 report.loss, report.overall_error)

        best_err = min(best_err, report.overall_error)
        ckpt = model_checkpoint(model, step=step, epoch=epoch, val_loss=report.loss,
                                val_error=report.overall_error)
        top = sorted(top + [ckpt], key=lambda c: c.metadata["val_loss"])[:max(cfg.keep_best, 1)]
        if report.loss < best_loss:
            best_loss, best = report.loss, ckpt
    return FinetuneResult(best, history, top, best_err, best_loss, step)


def probe_encoder(pretrained: ConformerEncoder, n_layers: int, freeze: bool) -> ConformerEncoder:
    enc = truncate(pretrained, n_layers)
    return set_frozen(enc, freeze)


def layer_sweep(train: Sequence[Utterance], val: Sequence[Utterance], pretrained: ConformerEncoder,
                layers: Sequence[int], classes: Sequence[str], cfg: TrainConfig,
                head_cfg: Optional[HeadConfig] = None, **finetune_kw) -> list[dict]:
    """Truncate to each L, attach a fresh head, fine-tune and record the best validation error."""
    bad = [L for L in layers if not 1 <= L <= pretrained.n_layers]
    if bad:
        raise ValueError(f"invalid layer counts for a {pretrained.n_layers}-layer encoder: {bad}")
    rows = []
    for L in layers:
        enc = probe_encoder(pretrained, L, cfg.freeze_encoder)
        model = build_model(enc, classes, head_cfg, seed=cfg.seed)
        result = finetune(train, val, model, classes, cfg, **finetune_kw)
        rows.append({"layers": L, "params": count_params(model.encoder, model.head),
                     "best_val_error": result.best_val_error, "best_val_loss": result.best_val_loss})
        log.info("L=%d  best val error %.2f%%", L, result.best_val_error)
    return rows


def write_csv(path, rows: Sequence[dict], fields: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fields})
    return path


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v
