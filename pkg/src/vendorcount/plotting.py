"""Matplotlib figures written next to CLI outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Strip the software tag so identical inputs give identical files.
_PNG_META = {"Software": None}


def _save(fig: plt.Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def figure_path(out: str | Path, suffix: str) -> Path:
    """``report.json`` + ``estimates`` -> ``report_estimates.png`` in the same folder."""
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}.png")


def plot_area_estimates(
    labels: Sequence[str], values: Sequence[float], moes: Sequence[float], path: Path, title: str = ""
) -> Path:
    """Horizontal bars with two-SE error whiskers, largest area on top."""
    vals = np.nan_to_num(np.asarray(values, dtype=float))
    errs = np.nan_to_num(np.asarray(moes, dtype=float))
    order = np.argsort(vals)
    fig, ax = plt.subplots(figsize=(7.0, 0.28 * len(labels) + 1.2))
    y = np.arange(len(labels))
    ax.barh(y, vals[order], xerr=errs[order], color="#4c72b0", ecolor="#333333", capsize=2)
    ax.set_yticks(y)
    ax.set_yticklabels([labels[i] for i in order], fontsize=7)
    ax.set_xlabel("estimated vendors")
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_xlim(left=0)
    return _save(fig, path)


def plot_bias_factors(factors: Mapping[str, Mapping[str, float]], path: Path) -> Path:
    """Grouped bars of the bias factor per scenario and class, with a reference line at 1."""
    scenarios = list(factors)
    classes = sorted({c for f in factors.values() for c in f})
    width = 0.8 / max(len(classes), 1)
    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    x = np.arange(len(scenarios))
    for k, cls in enumerate(classes):
        heights = [factors[s].get(cls, np.nan) for s in scenarios]
        ax.bar(x + (k - (len(classes) - 1) / 2) * width, heights, width, label=cls)
    ax.axhline(1.0, color="black", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios, fontsize=7, rotation=15)
    ax.set_ylabel("weighted / unweighted")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def plot_coverage(coverage: Mapping[str, float], nominal: float, path: Path) -> Path:
    names = list(coverage)
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.bar(np.arange(len(names)), [coverage[n] for n in names], color="#55a868")
    ax.axhline(nominal, color="black", lw=0.8, ls="--")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, fontsize=7, rotation=15)
    ax.set_ylim(0, 1)
    ax.set_ylabel("empirical coverage")
    return _save(fig, path)


def plot_counts(cells: Sequence[str], n0: Sequence[float], n1: Sequence[float], path: Path) -> Path:
    """Mean simulated respondents per cell and status."""
    x = np.arange(len(cells))
    fig, ax = plt.subplots(figsize=(6.5, 3.0))
    ax.bar(x - 0.2, n0, 0.4, label="uncredentialed")
    ax.bar(x + 0.2, n1, 0.4, label="credentialed")
    ax.set_xticks(x)
    ax.set_xticklabels(cells, fontsize=7, rotation=30)
    ax.set_ylabel("mean respondents")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def plot_posterior(total: np.ndarray, chain: np.ndarray, path: Path) -> Path:
    """Trace of the vendor total per chain beside its pooled histogram."""
    fig, (trace, hist) = plt.subplots(1, 2, figsize=(8.0, 3.0), gridspec_kw={"width_ratios": [2, 1]})
    for c in np.unique(chain):
        trace.plot(total[chain == c], lw=0.5, label=f"chain {c}")
    trace.set_xlabel("retained draw")
    trace.set_ylabel("total vendors")
    hist.hist(total, bins=40, orientation="horizontal", color="#8172b2")
    hist.set_xlabel("draws")
    return _save(fig, path)
