"""Training-log reports: loss/LR curves, per-epoch metric plots, summary table."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import METRIC_SIGN

_PLOT_METRICS = ("s_alpha", "e_phi", "f_beta_w", "mae", "ber", "mdice", "miou")


class LogParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


def load_log(path):
    """Parse a JSON-lines training log into (step_records, eval_records)."""
    steps, evals = [], []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(i, f"invalid JSON ({exc.msg})") from exc
            kind = record.get("type")
            if kind == "step":
                if not {"step", "lr", "loss"} <= record.keys():
                    raise LogParseError(i, "step record missing step/lr/loss")
                steps.append(record)
            elif kind == "eval":
                if "metrics" not in record:
                    raise LogParseError(i, "eval record missing metrics")
                evals.append(record)
            else:
                raise LogParseError(i, f"unknown record type {kind!r}")
    if not steps:
        raise LogParseError(0, "log contains no step records")
    return steps, evals


def _save_line_plot(path, xs, ys, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "promptseg"})
    plt.close(fig)


def summarize(steps, evals) -> list:
    """Per-metric rows: (metric, best, best_epoch, final). Best follows the
    metric direction (max for quality scores, min for mae/ber)."""
    rows = []
    for name in _PLOT_METRICS:
        values = [(e["epoch"], e["metrics"][name]) for e in evals if name in e["metrics"]]
        if not values:
            continue
        sign = METRIC_SIGN[name]
        best_epoch, best = max(values, key=lambda ev: sign * ev[1])
        rows.append({"metric": name, "best": best, "best_epoch": best_epoch,
                     "final": values[-1][1]})
    rows.append({
        "metric": "loss",
        "best": min(s["loss"] for s in steps),
        "best_epoch": None,
        "final": steps[-1]["loss"],
    })
    return rows


def write_report(log_path, out_dir) -> list:
    """Emit plots and summary.csv for a training log; returns summary rows."""
    steps, evals = load_log(log_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    xs = [s["step"] for s in steps]
    _save_line_plot(out_dir / "loss_curve.png", xs, [s["loss"] for s in steps],
                    "step", "training loss")
    _save_line_plot(out_dir / "lr_curve.png", xs, [s["lr"] for s in steps],
                    "step", "learning rate")

    if evals:
        fig, axes = plt.subplots(2, 4, figsize=(16, 7))
        epochs = [e["epoch"] for e in evals]
        for ax, name in zip(axes.flat, _PLOT_METRICS):
            ys = [e["metrics"].get(name) for e in evals]
            ax.plot(epochs, ys, marker="o", markersize=3, linewidth=1.0)
            ax.set_title(name)
            ax.set_xlabel("epoch")
            ax.grid(True, alpha=0.3)
        axes.flat[-1].axis("off")
        fig.tight_layout()
        fig.savefig(out_dir / "metrics.png", metadata={"Software": "promptseg"})
        plt.close(fig)

    rows = summarize(steps, evals)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "best", "best_epoch", "final"])
        writer.writeheader()
        writer.writerows(rows)
    return rows
