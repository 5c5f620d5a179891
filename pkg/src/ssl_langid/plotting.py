"""Figures for the CSV tables written by the training and evaluation commands.

Every table kind has a fixed header, so a CSV is recognised by its columns
and rendered to a PNG with the same stem next to it.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v) -> Optional[float]:
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def kind_of(fields) -> Optional[str]:
    cols = set(fields or ())
    if {"layers", "best_val_error"} <= cols:
        return "sweep"
    if {"epoch", "train_loss", "val_loss", "val_error"} <= cols:
        return "metrics"
    if {"update", "loss"} <= cols:
        return "pretrain"
    if {"bucket", "n", "error_pct"} <= cols:
        return "eval"
    return None


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_sweep(rows, out, title: str = "") -> Path:
    """Best validation error against encoder depth; one line per ``series`` column value."""
    series: dict[str, list] = {}
    for r in rows:
        series.setdefault(r.get("series") or "", []).append((int(r["layers"]), float(r["best_val_error"])))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name or None)
        ax.set_xlabel("encoder layers L")
        ax.set_ylabel("best validation error (%)")
        ax.set_xticks(sorted({int(r["layers"]) for r in rows}))
        if any(series):
            ax.legend()
        ax.set_title(title)
        return _save(fig, out)


def plot_metrics(rows, out, title: str = "") -> Path:
    """Train/validation loss and validation error per epoch."""
    epochs = [int(r["epoch"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, [float(r["train_loss"]) for r in rows], label="train loss")
        ax.plot(epochs, [float(r["val_loss"]) for r in rows], label="val loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        err = ax.twinx()
        err.plot(epochs, [float(r["val_error"]) for r in rows], color="C3", linestyle="--", label="val error")
        err.set_ylabel("validation error (%)")
        err.grid(False)
        handles = ax.get_legend_handles_labels()[0] + err.get_legend_handles_labels()[0]
        ax.legend(handles, [h.get_label() for h in handles])
        ax.set_title(title)
        return _save(fig, out)


def plot_pretrain(rows, out, title: str = "") -> Path:
    updates = [int(r["update"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(updates, [float(r["loss"]) for r in rows], linewidth=0.8)
        ax.set_xlabel("update")
        ax.set_ylabel("contrastive loss")
        ax.set_title(title)
        return _save(fig, out)


def plot_eval(rows, out, title: str = "") -> Path:
    """Error per duration bucket; empty buckets are drawn as a labelled gap."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [r["bucket"] for r in rows]
        values = [_num(r["error_pct"]) for r in rows]
        bars = ax.bar(names, [v or 0.0 for v in values], color=["C0" if v is not None else "0.8" for v in values])
        for bar, r, v in zip(bars, rows, values):
            label = "N/A" if v is None else f"{v:.1f}%\nn={r['n']}"
            ax.annotate(label, (bar.get_x() + bar.get_width() / 2, bar.get_height()), ha="center", va="bottom")
        ax.set_ylabel("error (%)")
        ax.set_title(title)
        return _save(fig, out)


PLOTTERS = {"sweep": plot_sweep, "metrics": plot_metrics, "pretrain": plot_pretrain, "eval": plot_eval}


def render_csv(path) -> Optional[Path]:
    """Render ``path`` to ``path.with_suffix('.png')`` if its header is recognised."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        kind = kind_of(reader.fieldnames)
        rows = list(reader)
    if kind is None or not rows:
        return None
    return PLOTTERS[kind](rows, path.with_suffix(".png"), title=path.stem)
