"""Matplotlib renderings of the delimited reports.

Every report path renders a PNG next to its TSV.  The Agg backend is forced
so rendering works headless, and figures carry no timestamps, keeping
repeated runs byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from adaptembed.calibrate import CalibrationResult
    from adaptembed.pipeline import ComparisonTable
    from adaptembed.select import SelectionResult

DPI = 110
_SAVE_KW = {"dpi": DPI, "metadata": {"Software": None}}


def _finish(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def wscore_histogram(wscores: Mapping[str, float], path: str | Path) -> None:
    """Distribution of per-word import weights."""
    values = np.array(sorted(wscores.values()))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=20, range=(0.0, 1.0), color="#4878b0", edgecolor="white")
    ax.set_xlabel("word import weight")
    ax.set_ylabel("words")
    ax.set_title(f"import weights over {len(values)} shared words")
    _finish(fig, path)


def calibration_heatmap(result: "CalibrationResult", path: str | Path) -> None:
    """Separation margin over the (lambda, alpha) grid, best cell marked."""
    lams = sorted({g.lam for g in result.diagnostics})
    alphas = sorted({g.alpha for g in result.diagnostics})
    margin = np.full((len(lams), len(alphas)), np.nan)
    for g in result.diagnostics:
        margin[lams.index(g.lam), alphas.index(g.alpha)] = g.margin
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(margin, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_yticks(range(len(lams)), [f"{l:g}" for l in lams])
    ax.set_xlabel("alpha")
    ax.set_ylabel("lambda")
    ax.plot(
        alphas.index(result.alpha), lams.index(result.lam),
        marker="*", markersize=16, color="red",
    )
    fig.colorbar(im, ax=ax, label="separation margin")
    ax.set_title(f"selected lambda={result.lam:g}, alpha={result.alpha:g}")
    _finish(fig, path)


def selection_histogram(result: "SelectionResult", path: str | Path) -> None:
    """Cumulative retrieval scores of candidates, cutoff line drawn."""
    doc_ids = sorted(result.votes)
    scores = np.array([result.cumulative_score[d] for d in doc_ids])
    kept = np.array([d in result.retained for d in doc_ids])
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(doc_ids):
        bins = np.histogram_bin_edges(scores, bins=20)
        ax.hist(
            [scores[kept], scores[~kept]],
            bins=bins,
            stacked=True,
            label=["retained", "dropped"],
            color=["#4878b0", "#d65f5f"],
        )
        ax.axvline(result.cutoff, color="black", linestyle="--", label="cutoff")
        ax.legend()
    ax.set_xlabel("cumulative retrieval score")
    ax.set_ylabel("candidate documents")
    ax.set_title(
        f"{len(result.retained)} of {len(doc_ids)} candidates retained "
        f"(cutoff quantile {result.cutoff_quantile:g})"
    )
    _finish(fig, path)


def metrics_bar(metrics: Mapping[str, float], path: str | Path) -> None:
    """One bar per scalar metric in a report."""
    keys = sorted(metrics)
    values = [metrics[k] for k in keys]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(keys, values, color="#4878b0")
    ax.bar_label(bars, fmt="%.4f")
    ax.set_ylabel("value")
    ax.set_title("evaluation metrics")
    _finish(fig, path)


def comparison_chart(table: "ComparisonTable", path: str | Path) -> None:
    """Grouped bars of methods x metrics with stddev whiskers."""
    n_labels = len(table.labels)
    n_metrics = len(table.metrics)
    x = np.arange(n_metrics, dtype=float)
    width = 0.8 / max(n_labels, 1)
    fig, ax = plt.subplots(figsize=(max(6, 2 * n_metrics), 4))
    for i, label in enumerate(table.labels):
        pos = x + (i - (n_labels - 1) / 2) * width
        ax.bar(
            pos,
            table.mean[i],
            width,
            yerr=table.std[i],
            capsize=3,
            label=f"{label} (n={table.runs[label]})",
        )
    ax.set_xticks(x, table.metrics)
    ax.set_ylabel("value")
    ax.legend()
    ax.set_title("method comparison")
    _finish(fig, path)


def frequency_binned_values(
    words: Sequence[str],
    values: Mapping[str, float],
    counts: Mapping[str, int],
    path: str | Path,
    n_bins: int = 5,
    value_name: str = "value",
) -> None:
    """Mean of a per-word value across frequency bins (most to least frequent)."""
    ranked = sorted(words, key=lambda w: (-counts.get(w, 0), w))
    fig, ax = plt.subplots(figsize=(6, 4))
    if ranked:
        edges = np.linspace(0, len(ranked), n_bins + 1).astype(int)
        means, labels = [], []
        for b in range(n_bins):
            chunk = ranked[edges[b] : edges[b + 1]]
            if not chunk:
                continue
            means.append(float(np.mean([values[w] for w in chunk])))
            labels.append(f"{edges[b] + 1}-{edges[b + 1]}")
        ax.bar(labels, means, color="#4878b0")
    ax.set_xlabel("frequency rank bin")
    ax.set_ylabel(f"mean {value_name}")
    ax.set_title(f"{value_name} by word frequency")
    _finish(fig, path)
