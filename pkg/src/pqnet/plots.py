"""Figure rendering for training metrics, noise sweeps, and benchmarks.

Every report-producing CLI command can drop a PNG next to its CSV/JSON
output; these helpers are also usable directly against saved CSVs.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _new_axes(xlabel: str, ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def plot_training_metrics(csv_path, out_png) -> Path:
    """Per-seed test accuracy and mean train loss against epoch."""
    by_seed = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_seed[row["seed"]].append(
                (int(row["epoch"]), float(row["train_loss"]), float(row["test_accuracy"]))
            )
    fig, ax = _new_axes("epoch", "test accuracy", "training progress")
    ax2 = ax.twinx()
    ax2.set_ylabel("train loss")
    for seed, rows in sorted(by_seed.items()):
        rows.sort()
        epochs = [r[0] for r in rows]
        ax.plot(epochs, [r[2] for r in rows], label=f"seed {seed}")
        ax2.plot(epochs, [r[1] for r in rows], linestyle=":", alpha=0.5)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)


def plot_sweep(csv_path, out_png, xlabel: str = "noise level") -> Path:
    """Mean accuracy with a +-1 std band over seeds per sweep level."""
    levels = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            levels[float(row["noise_level"])].append(float(row["accuracy"]))
    xs = sorted(levels)
    means = np.array([np.mean(levels[x]) for x in xs])
    stds = np.array([np.std(levels[x]) for x in xs])
    fig, ax = _new_axes(xlabel, "test accuracy", "noise sweep")
    ax.plot(xs, means, marker="o")
    ax.fill_between(xs, means - stds, means + stds, alpha=0.25)
    ax.axhline(1 / 8, color="gray", linestyle="--", linewidth=0.8, label="chance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)


def plot_bench(report: dict, out_png) -> Path:
    """Bar chart of batched vs sequential throughput."""
    modes = [m for m in ("sequential", "batched") if m in report]
    rates = [report[m]["samples_per_second_mean"] for m in modes]
    errs = [report[m]["samples_per_second_std"] for m in modes]
    fig, ax = _new_axes("", "samples / second", "throughput")
    ax.bar(modes, rates, yerr=errs, color=["#888", "#2a6fbb"], width=0.5)
    if "ratio" in report:
        ax.text(0.5, 0.9, f"ratio {report['ratio']:.1f}x", transform=ax.transAxes, ha="center")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return Path(out_png)
