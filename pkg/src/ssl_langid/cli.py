"""Command-line entry point: ``ssl-langid <command> [options]``.

Settings come from an optional JSON config file with one section per
component (see ``RunConfig``), then ``--set section.key=value`` overrides,
then the command's own flags. The data root is ``--data-root``, else
``$SSL_LANGID_DATA``, else the current directory. Every command writes a
``*.run.json`` file holding the resolved settings next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.stats import binomtest

from . import __version__
from .audio import FrontendConfig
from .checkpoint import FORMAT_VERSION, Checkpoint, average_checkpoints, load_many
from .corpus import PartitionSpec, build_corpus, default_partition, gen_language_set, partition
from .encoder import ConformerEncoder, EncoderConfig, count_params, truncate
from .head import HeadConfig
from .manifest import Record, read_manifest, select
from .ngram import NgramConfig, classify, fit_codebook, fit_profiles, load_model, save_model
from .plotting import render_csv
from .pretrain import PretrainConfig, pretrain
from .specaugment import SpecAugmentConfig
from .train import (TrainConfig, Utterance, build_model, evaluate, finetune, layer_sweep, load_utterances,
                    model_checkpoint, write_csv)

log = logging.getLogger("ssl_langid")

ENV_DATA_ROOT = "SSL_LANGID_DATA"
PROG = "ssl-langid"


class CLIError(Exception):
    """A user-facing failure reported as a single line."""


@dataclass
class HeadSection:
    bottleneck_dim: int = 256
    nonlinearity: bool = True


@dataclass
class CorpusConfig:
    languages: int = 12
    confusable: int = 2
    minutes: float = 6.0
    eval_minutes: float = 1.0
    n_phones: int = 6
    n_unseen: int = 4
    seed: int = 0


@dataclass
class RunConfig:
    """Every component's settings; the JSON config file mirrors these sections."""

    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadSection = field(default_factory=HeadSection)
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ngram: NgramConfig = field(default_factory=NgramConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(sections))
        if unknown:
            raise CLIError(f"unknown config section(s): {', '.join(unknown)}")
        built = {}
        for name, f in sections.items():
            section_cls = f.default_factory
            values = d.get(name, {})
            if not isinstance(values, dict):
                raise CLIError(f"config section '{name}' must be an object")
            allowed = {g.name for g in dataclasses.fields(section_cls) if not g.name.startswith("_")}
            bad = sorted(set(values) - allowed)
            if bad:
                raise CLIError(f"unknown key(s) in config section '{name}': {', '.join(bad)}")
            try:
                built[name] = section_cls(**values)
            except (TypeError, ValueError) as exc:
                raise CLIError(f"config section '{name}': {exc}") from exc
        return cls(**built)

    def to_dict(self) -> dict:
        return {
            f.name: {k: v for k, v in asdict(getattr(self, f.name)).items() if not k.startswith("_")}
            for f in dataclasses.fields(self)
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CLIError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise CLIError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise CLIError(f"config {path} must hold a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise CLIError(f"override '{item}' is not of the form section.key=value")
        raw.setdefault(section, {})[name] = _parse_value(value)
    return RunConfig.from_dict(raw)


def resolve_data_root(flag: Optional[str]) -> Path:
    return Path(flag or os.environ.get(ENV_DATA_ROOT) or os.getcwd())


def write_run_metadata(path, command: str, args: argparse.Namespace, cfg: RunConfig, **extra) -> Path:
    """Everything needed to replay a run. No timestamps, so reruns are byte-identical."""
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func",)}
    meta = {
        "command": command,
        "flags": flags,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": getattr(args, "seed", None),
        "versions": {"ssl_langid": __version__, "checkpoint_format": FORMAT_VERSION,
                     "torch": torch.__version__, "numpy": np.__version__},
        **extra,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n")
    return path


# data plumbing

def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    return resolve_data_root(args.data_root) / "manifest.jsonl"


def _read_records(path: Path) -> list[Record]:
    if not path.exists():
        raise CLIError(f"manifest not found: {path}")
    return read_manifest(path)


def corpus_partition(manifest: Path, records: Sequence[Record], n_unseen: int = 4) -> PartitionSpec:
    stored = manifest.parent / "partition.json"
    labels = sorted({r.label for r in records})
    if stored.exists():
        d = json.loads(stored.read_text())
        return partition(labels, d["seen"], d["unseen"])
    return default_partition(labels, n_unseen)


def partition_labels(name: Optional[str], manifest: Path, records: Sequence[Record],
                     cfg: RunConfig) -> Optional[list[str]]:
    if name in (None, "all"):
        return None
    part = corpus_partition(manifest, records, cfg.corpus.n_unseen)
    return list(getattr(part, name))


def load_split(records: Sequence[Record], manifest: Path, split: str, labels, cfg: RunConfig,
               workers: int) -> list[Utterance]:
    chosen = select(records, split=split, labels=labels)
    if not chosen:
        raise CLIError(f"no '{split}' records in {manifest}" + (f" for labels {labels}" if labels else ""))
    return load_utterances(chosen, manifest.parent, cfg.frontend, workers=workers)


def parse_layers(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CLIError(f"--layers expects comma-separated integers, got '{text}'") from exc


def parse_buckets(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        try:
            out.append((float(lo), float(hi)))
        except ValueError as exc:
            raise CLIError(f"bucket '{part}' is not of the form lo:hi") from exc
        if not sep or out[-1][0] >= out[-1][1]:
            raise CLIError(f"bucket '{part}' is not of the form lo:hi with lo < hi")
    return out


def encoder_from_checkpoint(ckpt: Checkpoint) -> ConformerEncoder:
    enc_cfg = ckpt.metadata.get("encoder")
    if enc_cfg is None:
        raise CLIError("checkpoint carries no encoder configuration")
    enc = ConformerEncoder(EncoderConfig(**enc_cfg))
    ckpt.load_into(enc, "encoder.")
    return enc


def _load_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except FileNotFoundError as exc:
        raise CLIError(f"checkpoint not found: {path}") from exc


def _train_config(cfg: RunConfig, args) -> TrainConfig:
    changes = {}
    for flag, key in (("epochs", "epochs"), ("lr", "peak_lr"), ("batch_size", "batch_size"), ("seed", "seed"),
                      ("keep_best", "keep_best")):
        if getattr(args, flag, None) is not None:
            changes[key] = getattr(args, flag)
    if getattr(args, "freeze", False):
        changes["freeze_encoder"] = True
    for name in getattr(args, "augment", None) or []:
        changes[{"specaugment": "spec_augment", "speed": "speed", "rir": "rir"}[name]] = True
    return dataclasses.replace(cfg.train, **changes)


def _fresh_encoder(cfg: RunConfig, seed: int) -> ConformerEncoder:
    torch.manual_seed(seed)
    return ConformerEncoder(cfg.encoder)


# commands

def cmd_gen_data(args, cfg: RunConfig) -> int:
    c = dataclasses.replace(cfg.corpus, **{k: v for k, v in (
        ("languages", args.languages), ("confusable", args.confusable), ("minutes", args.minutes),
        ("eval_minutes", args.eval_minutes), ("seed", args.seed)) if v is not None})
    out = Path(args.out) if args.out else resolve_data_root(args.data_root)
    specs = gen_language_set(c.languages, c.confusable, seed=c.seed, n_phones=c.n_phones)
    records = build_corpus(specs, c.minutes / 60.0, out, seed=c.seed, eval_hours_per_language=c.eval_minutes / 60.0)
    n_unseen = min(c.n_unseen, c.languages - 1)
    part = default_partition([s.language for s in specs], n_unseen)
    (out / "partition.json").write_text(json.dumps(asdict(part), indent=1) + "\n")
    write_run_metadata(out / "gen-data.run.json", "gen-data", args, dataclasses.replace(cfg, corpus=c))
    counts = {s: sum(r.split == s for r in records) for s in ("train", "val", "eval")}
    print(f"wrote {len(records)} records for {len(specs)} languages to {out} "
          f"(train {counts['train']}, val {counts['val']}, eval {counts['eval']})")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    manifest = _manifest_path(args)
    records = _read_records(manifest)
    labels = partition_labels(args.partition, manifest, records, cfg)
    changes = {k: v for k, v in (("total_updates", args.updates), ("peak_lr", args.lr),
                                 ("warmup_steps", args.warmup), ("batch_size", args.batch_size),
                                 ("seed", args.seed)) if v is not None}
    pcfg = dataclasses.replace(cfg.pretrain, **changes)
    cfg = dataclasses.replace(cfg, pretrain=pcfg)
    utts = load_split(records, manifest, "train", labels, cfg, args.workers)
    out = Path(args.out) if args.out else resolve_data_root(args.data_root) / "runs" / "pretrain.ckpt"
    ckpt_dir = out.parent / (out.stem + "_ckpts") if pcfg.checkpoint_every else None
    encoder = _fresh_encoder(cfg, pcfg.seed)
    result = pretrain(utts, encoder, pcfg, out_dir=ckpt_dir)
    result.checkpoint.metadata.update(frontend=asdict(cfg.frontend), config_hash=cfg.digest(),
                                      languages=labels)
    result.checkpoint.save(out)
    loss_csv = result.write_log(out.with_suffix(".loss.csv"))
    write_run_metadata(out.with_suffix(".run.json"), "pretrain", args, cfg, n_utterances=len(utts))
    print(f"pre-trained {pcfg.total_updates} updates on {len(utts)} utterances: "
          f"loss {result.history[0]['loss']:.4f} -> {result.history[-1]['loss']:.4f}; wrote {out} and {loss_csv}")
    return 0


def cmd_probe(args, cfg: RunConfig) -> int:
    manifest = _manifest_path(args)
    records = _read_records(manifest)
    labels = partition_labels(args.partition, manifest, records, cfg)
    tcfg = _train_config(cfg, args)
    cfg = dataclasses.replace(cfg, train=tcfg)
    if args.ckpt:
        ckpt = _load_checkpoint(args.ckpt)
        encoder = encoder_from_checkpoint(ckpt)
    else:
        encoder = _fresh_encoder(cfg, tcfg.seed)
    layers = parse_layers(args.layers) if args.layers else list(range(1, encoder.n_layers + 1))
    bad = [L for L in layers if not 1 <= L <= encoder.n_layers]
    if bad:
        raise CLIError(f"invalid --layers for a {encoder.n_layers}-layer encoder: {bad}")
    train = load_split(records, manifest, "train", labels, cfg, args.workers)
    val = load_split(records, manifest, "val", labels, cfg, args.workers)
    classes = sorted({u.label for u in train})
    head_cfg = HeadConfig(len(classes), **asdict(cfg.head))
    rows = layer_sweep(train, val, encoder, layers, classes, tcfg, head_cfg, frontend=cfg.frontend,
                       spec_cfg=cfg.specaugment)
    series = args.label or ("pretrained" if args.ckpt else "random")
    for r in rows:
        r["series"] = series
    out_dir = Path(args.out_dir) if args.out_dir else resolve_data_root(args.data_root) / "runs" / "probe"
    path = write_csv(out_dir / "sweep.csv", rows, ["layers", "params", "best_val_error", "best_val_loss", "series"])
    write_run_metadata(out_dir / "probe.run.json", "probe", args, cfg, classes=classes)
    for r in rows:
        print(f"L={r['layers']}\tparams={r['params']}\tbest_val_error={r['best_val_error']:.2f}%")
    print(f"wrote {path}")
    return 0


def cmd_finetune(args, cfg: RunConfig) -> int:
    manifest = _manifest_path(args)
    records = _read_records(manifest)
    labels = partition_labels(args.partition, manifest, records, cfg)
    tcfg = _train_config(cfg, args)
    cfg = dataclasses.replace(cfg, train=tcfg)
    train = load_split(records, manifest, "train", labels, cfg, args.workers)
    val = load_split(records, manifest, "val", labels, cfg, args.workers)

    start_step = 0
    if args.resume:
        ckpt = _load_checkpoint(args.resume)
        classes = ckpt.metadata.get("classes")
        if not classes or "head" not in ckpt.metadata:
            raise CLIError(f"{args.resume} is not a fine-tuned model checkpoint")
        encoder = ConformerEncoder(EncoderConfig(**ckpt.metadata["encoder"]))
        model = build_model(encoder, classes, HeadConfig(**ckpt.metadata["head"]), seed=tcfg.seed)
        ckpt.load_into(model)
        start_step = int(ckpt.metadata.get("step", 0))
    else:
        classes = sorted({u.label for u in train})
        if args.ckpt:
            encoder = encoder_from_checkpoint(_load_checkpoint(args.ckpt))
        else:
            encoder = _fresh_encoder(cfg, tcfg.seed)
        if args.layers is not None:
            if not 1 <= args.layers <= encoder.n_layers:
                raise CLIError(f"invalid --layers for a {encoder.n_layers}-layer encoder: {args.layers}")
            encoder = truncate(encoder, args.layers)
        model = build_model(encoder, classes, HeadConfig(len(classes), **asdict(cfg.head)), seed=tcfg.seed)

    out_dir = Path(args.out_dir) if args.out_dir else resolve_data_root(args.data_root) / "runs" / "finetune"
    result = finetune(train, val, model, classes, tcfg, frontend=cfg.frontend, spec_cfg=cfg.specaugment,
                      start_step=start_step)
    common = dict(classes=classes, frontend=asdict(cfg.frontend), config_hash=cfg.digest())
    for c in result.top:
        c.metadata.update(common)
        c.save(out_dir / f"epoch_{c.metadata['epoch']:03d}.ckpt")
    result.best.metadata.update(common)
    result.best.save(out_dir / "best.ckpt")
    model_checkpoint(model, step=result.steps, epoch=len(result.history), **common).save(out_dir / "last.ckpt")
    metrics = write_csv(out_dir / "metrics.csv", result.history,
                        ["epoch", "train_loss", "val_loss", "val_error", "lr", "step"])
    write_run_metadata(out_dir / "finetune.run.json", "finetune", args, cfg, start_step=start_step,
                       final_step=result.steps, params=count_params(model.encoder, model.head))
    print(f"best val error {result.best_val_error:.2f}%  best val loss {result.best_val_loss:.4f}  "
          f"steps {start_step}->{result.steps}; wrote {out_dir / 'best.ckpt'} and {metrics}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ckpt = _load_checkpoint(args.ckpt)
    meta = ckpt.metadata
    if "classes" not in meta or "head" not in meta:
        raise CLIError(f"{args.ckpt} is not a fine-tuned model checkpoint")
    if "frontend" in meta:
        cfg = dataclasses.replace(cfg, frontend=FrontendConfig(**meta["frontend"]))
    model = build_model(ConformerEncoder(EncoderConfig(**meta["encoder"])), meta["classes"],
                        HeadConfig(**meta["head"]))
    ckpt.load_into(model)
    manifest = _manifest_path(args)
    records = _read_records(manifest)
    labels = partition_labels(args.partition, manifest, records, cfg)
    utts = load_split(records, manifest, args.split, labels, cfg, args.workers)
    report = evaluate(utts, model, meta["classes"], parse_buckets(args.buckets))
    out = Path(args.out) if args.out else Path(args.ckpt).with_suffix(f".{args.split}.csv")
    report.write_csv(out)
    report.write_confusion(out.with_name(out.stem + ".confusion.csv"))
    write_run_metadata(out.with_suffix(".run.json"), "evaluate", args, cfg)
    cells = "  ".join(f"{r['bucket']} {r['error_pct']} (n={r['n']})" for r in report.rows())
    print(f"{cells}; wrote {out}")
    return 0


def cmd_avg_ckpt(args, cfg: RunConfig) -> int:
    paths = sorted(glob.glob(args.glob))
    if not paths:
        raise CLIError(f"no checkpoints match {args.glob}")
    averaged = average_checkpoints(load_many(paths), k=args.k, criterion=args.criterion)
    out = Path(args.out)
    averaged.save(out)
    write_run_metadata(out.with_suffix(".run.json"), "avg-ckpt", args, cfg, inputs=paths)
    print(f"averaged {averaged.metadata['k']} of {len(paths)} checkpoints into {out}")
    return 0


def cmd_ngram(args, cfg: RunConfig) -> int:
    manifest = _manifest_path(args)
    records = _read_records(manifest)
    labels = partition_labels(args.partition, manifest, records, cfg)
    model_path = Path(args.model) if args.model else resolve_data_root(args.data_root) / "runs" / "ngram.json"
    ncfg = dataclasses.replace(cfg.ngram, **{k: v for k, v in (("k", args.k), ("seed", args.seed)) if v is not None})
    cfg = dataclasses.replace(cfg, ngram=ncfg)
    if args.fit:
        utts = load_split(records, manifest, args.split or "train", labels, cfg, args.workers)
        feats = [u.feats for u in utts]
        cb = fit_codebook(feats, k=ncfg.k, seed=ncfg.seed, max_frames=ncfg.max_frames)
        profiles = fit_profiles(feats, [u.label for u in utts], cb, ncfg.top, ncfg.orders)
        save_model(model_path, cb, profiles, k=ncfg.k, top=ncfg.top, orders=list(ncfg.orders),
                   frontend=asdict(cfg.frontend))
        write_run_metadata(model_path.with_suffix(".run.json"), "ngram", args, cfg)
        print(f"fit a {ncfg.k}-symbol codebook and {len(profiles)} profiles; wrote {model_path}")
        return 0

    if not model_path.exists():
        raise CLIError(f"n-gram model not found: {model_path} (run with --fit first)")
    cb, profiles, meta = load_model(model_path)
    top, orders = meta.get("top", ncfg.top), tuple(meta.get("orders", ncfg.orders))
    utts = load_split(records, manifest, args.split or "eval", labels, cfg, args.workers)
    unknown = sorted({u.label for u in utts} - set(profiles))
    if unknown:
        raise CLIError(f"labels without a profile: {', '.join(unknown)}")
    rows = [{"path": u.path, "label": u.label, "predicted": classify(u.feats, cb, profiles, top, orders)}
            for u in utts]
    n_correct = sum(r["label"] == r["predicted"] for r in rows)
    chance = 1.0 / len(profiles)
    p = binomtest(n_correct, len(rows), chance, alternative="greater").pvalue
    out = Path(args.out) if args.out else model_path.with_suffix(".predictions.csv")
    write_csv(out, rows, ["path", "label", "predicted"])
    write_run_metadata(out.with_suffix(".run.json"), "ngram", args, cfg, accuracy=n_correct / len(rows))
    print(f"accuracy {n_correct / len(rows):.4f} ({n_correct}/{len(rows)}), chance {chance:.4f}, "
          f"binomial p={p:.3g}; wrote {out}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    root = Path(args.dir) if args.dir else resolve_data_root(args.data_root)
    if not root.exists():
        raise CLIError(f"report directory not found: {root}")
    written = [png for png in (render_csv(p) for p in sorted(root.rglob("*.csv"))) if png is not None]
    if not written:
        raise CLIError(f"no recognised CSV tables under {root}")
    for png in written:
        print(png)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (sections: " + ", ".join(
        f.name for f in dataclasses.fields(RunConfig)) + ")")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; VALUE is parsed as JSON when possible")
    common.add_argument("--data-root", help=f"data directory (default: ${ENV_DATA_ROOT}, else the current directory)")
    common.add_argument("--workers", type=int, default=1, help="cap on parallel data-loading workers and torch threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog=PROG, description="Conformer language identification at desk scale.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="synthesize a corpus and its manifest")
    p.add_argument("--languages", type=int, help="number of languages (default 12)")
    p.add_argument("--confusable", type=int, help="confusable language pairs (default 2)")
    p.add_argument("--minutes", type=float, help="training audio per language (default 6)")
    p.add_argument("--eval-minutes", type=float, help="evaluation audio per language (default 1)")
    p.add_argument("--out", help="corpus directory (default: data root)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    partition_help = "restrict to a language partition (default: all languages)"
    p = sub.add_parser("pretrain", parents=[common], help="contrastive pre-training of the encoder")
    p.add_argument("--manifest")
    p.add_argument("--partition", choices=["all", "seen", "unseen", "rest"], default="seen")
    p.add_argument("--updates", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path (default: <data root>/runs/pretrain.ckpt)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", parents=[common], help="layer sweep with a fresh head per depth")
    p.add_argument("--ckpt", help="pre-trained checkpoint (omit for a randomly initialized encoder)")
    p.add_argument("--layers", help="comma-separated depths, e.g. 6,7,8,9,10 (default: all)")
    p.add_argument("--freeze", action="store_true", help="train the head only")
    p.add_argument("--partition", choices=["all", "seen", "unseen", "rest"], help=partition_help)
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", type=lambda s: [x for x in s.split(",") if x], default=[],
                   help="comma list of specaugment,speed,rir")
    p.add_argument("--label", help="series name written to the sweep table")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune encoder and head")
    p.add_argument("--ckpt", help="pre-trained checkpoint (omit to train from scratch)")
    p.add_argument("--resume", help="fine-tuned checkpoint to continue from; the step count carries on")
    p.add_argument("--layers", type=int, help="keep the bottom L encoder blocks")
    p.add_argument("--freeze", action="store_true")
    p.add_argument("--partition", choices=["all", "seen", "unseen", "rest"], help=partition_help)
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int, help="default 20")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--keep-best", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", type=lambda s: [x for x in s.split(",") if x], default=[],
                   help="comma list of specaugment,speed,rir")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="error rates overall and by duration bucket")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="eval")
    p.add_argument("--partition", choices=["all", "seen", "unseen", "rest"], help=partition_help)
    p.add_argument("--buckets", default="0:5,5:20", help="duration buckets lo:hi in seconds")
    p.add_argument("--out", help="report CSV (default: next to the checkpoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("avg-ckpt", parents=[common], help="average the k best checkpoints by validation loss")
    p.add_argument("--glob", required=True, help="checkpoint glob pattern (quote it)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--criterion", default="val_loss")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_avg_ckpt)

    p = sub.add_parser("ngram", parents=[common], help="pseudo-phone n-gram baseline")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--fit", action="store_true")
    mode.add_argument("--eval", action="store_true")
    p.add_argument("--manifest")
    p.add_argument("--model", help="model JSON (default: <data root>/runs/ngram.json)")
    p.add_argument("--split", help="default: train for --fit, eval for --eval")
    p.add_argument("--partition", choices=["all", "seen", "unseen", "rest"], help=partition_help)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="predictions CSV for --eval")
    p.set_defaults(func=cmd_ngram)

    p = sub.add_parser("report", parents=[common], help="render PNG figures next to every result CSV")
    p.add_argument("--dir", help="directory searched recursively (default: data root)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print(f"{PROG} {args.command}: error: --workers must be >= 1", file=sys.stderr)
        return 2
    torch.set_num_threads(args.workers)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except (CLIError, ValueError, OSError, KeyError, TypeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG} {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
