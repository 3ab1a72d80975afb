"""Run artifacts: delimited curve files, JSON summaries and rendered figures.

Curve CSVs follow one stable schema (step, train_rmse, test_rmse, nodes,
skipped) and never contain wall-clock values, so reruns of the same config
are byte-identical; timing lives in its own section of the JSON summary.
Figures are rendered headlessly next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

CURVE_FIELDS = ("step", "train_rmse", "test_rmse", "nodes", "skipped")
EPOCH_FIELDS = ("epoch", "train_rmse", "test_accuracy", "nodes", "skipped")


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_curve_csv(path, rows) -> None:
    """Training checkpoints; ``rows`` are kan.CheckpointRow objects."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_FIELDS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, f)) for f in CURVE_FIELDS])


def write_epoch_csv(path, rows) -> None:
    """Per-epoch classifier rows (dicts with EPOCH_FIELDS keys)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(EPOCH_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in EPOCH_FIELDS])


def write_table_csv(path, fields, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_curve_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def plot_rmse_curves(path, curves: dict[str, list]) -> None:
    """Log-log step-vs-RMSE curves, one line per task."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for name, rows in curves.items():
        steps = [r.step for r in rows if r.step > 0 and not math.isnan(r.test_rmse)]
        rmse = [r.test_rmse for r in rows if r.step > 0 and not math.isnan(r.test_rmse)]
        ax.loglog(steps, rmse, label=name, linewidth=1.2)
    ax.set_xlabel("training samples")
    ax.set_ylabel("test RMSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fit(path, grid_rows) -> None:
    """Two panels: target vs model, and their first derivatives."""
    xs = [r[0] for r in grid_rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    ax1.plot(xs, [r[1] for r in grid_rows], label="target", linewidth=1.5)
    ax1.plot(xs, [r[2] for r in grid_rows], label="model", linewidth=1.0)
    ax1.set_ylabel("value")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(xs, [r[3] for r in grid_rows], label="target derivative", linewidth=1.5)
    ax2.plot(xs, [r[4] for r in grid_rows], label="model derivative", linewidth=1.0)
    ax2.set_xlabel("x")
    ax2.set_ylabel("derivative")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_accuracy(path, rows) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r["epoch"] for r in rows], [r["test_accuracy"] for r in rows],
            marker="o", linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(path, rows, xlabel) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r[0] for r in rows], [r[1] * 1e6 for r in rows], marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("microseconds per update")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
