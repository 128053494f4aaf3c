"""Matplotlib figures for experiment reports.

Uses the Agg backend and strips SVG dates/ids so reruns produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ES_COLOR = "tab:red"
OURS_COLOR = "tab:blue"

plt.rcParams.update({
    "svg.hashsalt": "guided-es",
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
})


def _save(fig, path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def _column(records, name):
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=float)


def loss_curve(records, path) -> Path:
    fig, ax = plt.subplots()
    ax.plot([r.step for r in records], _column(records, "loss"), color=OURS_COLOR, lw=1.2)
    ax.set_xlabel("update")
    ax.set_ylabel("training loss (NLL)")
    return _save(fig, path)


def train_comparison(results: dict, path, threshold: float | None = None) -> Path:
    """Loss curves per method, ES in red and the guided scheme in blue."""
    fig, ax = plt.subplots()
    for method, res in results.items():
        color = ES_COLOR if method == "es" else OURS_COLOR
        ax.plot([r.step for r in res.records], res.losses, color=color, lw=1.2,
                label=f"{method} ({res.optimizer}, lr={res.learning_rate:g})")
    if threshold is not None:
        ax.axhline(threshold, color="0.4", ls="--", lw=0.8, label="threshold")
    ax.set_xlabel("update")
    ax.set_ylabel("training loss (NLL)")
    ax.legend(frameon=False)
    return _save(fig, path)


def alignment(records, summary: dict, path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 3.8))
    steps = [r.step for r in records]
    ax1.plot(steps, np.abs(_column(records, "consec_cos")), color=OURS_COLOR, lw=1.0,
             label="consecutive gradients")
    ax1.axhline(summary["random_baseline"]["mean_abs_cos"], color="tab:green", lw=1.0,
                label="random vectors")
    ax1.set_xlabel("update")
    ax1.set_ylabel("|cosine|")
    ax1.legend(frameon=False)
    ax2.plot(steps, _column(records, "ratio"), color=OURS_COLOR, lw=1.0)
    ax2.axhline(1.0, color="0.4", ls="--", lw=0.8)
    ax2.set_xlabel("update")
    ax2.set_ylabel("cos(guided, grad) / cos(ES, grad)")
    return _save(fig, path)


def noise_panels(results: dict, path) -> Path:
    names = sorted({name for name, _ in results}, key=lambda s: (s != "es", s))
    fig, axes = plt.subplots(1, len(names), figsize=(4.0 * len(names), 3.6), sharey=True)
    for ax, name in zip(np.atleast_1d(axes), names):
        for noisy, color in ((False, ES_COLOR), (True, OURS_COLOR)):
            res = results.get((name, noisy))
            if res is None:
                continue
            curve = res.proper_curve()
            ax.plot(np.arange(1, curve.size + 1), curve, color=color, lw=1.1,
                    label="noisy" if noisy else "clean")
        ax.set_title(name)
        ax.set_xlabel("proper updates")
    np.atleast_1d(axes)[0].set_ylabel("training loss (NLL)")
    np.atleast_1d(axes)[0].legend(frameon=False)
    return _save(fig, path)


def chain_mean(result, path, reference: float | None = None, label: str = "E[X_t^2]") -> Path:
    fig, ax = plt.subplots()
    ax.plot(result.mean_x_sq, color=OURS_COLOR, lw=1.2, label=label)
    if reference is not None:
        ax.axhline(reference, color="0.4", ls="--", lw=0.8, label="fixed point")
    ax.set_xlabel("step t")
    ax.set_ylabel("squared cosine")
    ax.legend(frameon=False)
    return _save(fig, path)


def hitting_histogram(samples, bound: float, path) -> Path:
    fig, ax = plt.subplots()
    ax.hist(samples, bins=30, color=OURS_COLOR, alpha=0.8)
    ax.axvline(float(np.mean(samples)), color="k", lw=1.0, label="mean")
    ax.axvline(bound, color=ES_COLOR, ls="--", lw=1.0, label="bound")
    ax.set_xlabel("hitting time T")
    ax.legend(frameon=False)
    return _save(fig, path)
