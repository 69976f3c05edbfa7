"""Delimited output tables and diagnostic figures for the CLI.

Figures are rendered straight to files (no interactive backend): PIT
histograms per variable/horizon and cumulative log Bayes factor paths.
The tables are plain delimiter-separated text keyed by model, variable,
horizon and metric so they can be joined or re-plotted externally.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DELIM = ","


def write_table(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=DELIM)
        writer.writerow(header)
        writer.writerows(rows)


def metric_rows(model: str, names, table, metric: str) -> list:
    """Long-format rows (model, variable, horizon, metric, value)."""
    rows = []
    for h in sorted(table.mean):
        for i, name in enumerate(names):
            rows.append([model, name, h, metric, f"{table.mean[h][i]:.6g}"])
    return rows


def acceptance_rows(model: str, acceptance: dict) -> list:
    return [[model, step, f"{rate:.4f}"] for step, rate in sorted(acceptance.items())]


def pit_figure(pit_result: dict, names, path: str) -> None:
    """Histogram grid of PIT values: one row per horizon, column per variable."""
    horizons = sorted(pit_result)
    k = len(names)
    fig, axes = plt.subplots(
        len(horizons), k, figsize=(3.0 * k, 2.4 * len(horizons)), squeeze=False
    )
    for r, h in enumerate(horizons):
        u, _ = pit_result[h]
        for i in range(k):
            ax = axes[r][i]
            ax.hist(u[:, i], bins=10, range=(0, 1), color="steelblue", edgecolor="white")
            ax.axhline(u.shape[0] / 10.0, color="darkred", lw=0.8, ls="--")
            if r == 0:
                ax.set_title(names[i], fontsize=9)
            if i == 0:
                ax.set_ylabel(f"h={h}", fontsize=9)
            ax.tick_params(labelsize=7)
    fig.suptitle("PIT histograms (dashed line = uniform)", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cum_bf_figure(series: dict, label_a: str, label_b: str, path: str) -> None:
    """Cumulative log Bayes factor paths, one panel per horizon.

    Positive values mean the second model predicts better.
    """
    horizons = sorted(series)
    fig, axes = plt.subplots(
        len(horizons), 1, figsize=(6.0, 2.2 * len(horizons)), squeeze=False
    )
    for r, h in enumerate(horizons):
        ax = axes[r][0]
        s = np.asarray(series[h])
        if s.ndim == 1:
            s = s[:, None]
        for i in range(s.shape[1]):
            ax.plot(s[:, i], lw=1.0)
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_ylabel(f"h={h}", fontsize=9)
        ax.tick_params(labelsize=7)
    axes[0][0].set_title(
        f"Cumulative log Bayes factor: {label_b} vs {label_a} (positive favors {label_b})",
        fontsize=9,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
