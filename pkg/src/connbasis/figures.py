"""Figure rendering for the reporting paths.

Every delimited report the CLI writes gets a rendered companion: the
cross-validation scatter tables become actual-versus-predicted panels
(train and test in different colors, identity line for reference), and
training traces become objective/residual curves.  Rendering is
headless; files are written, nothing is shown.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError

_SPLIT_STYLE = {
    "train": {"color": "tab:orange", "marker": "o"},
    "test": {"color": "tab:blue", "marker": "s"},
}
_FALLBACK_STYLE = {"color": "tab:gray", "marker": "."}


def scatter_figure(scatter, score_name, path):
    """Actual-versus-predicted panel for one score dimension."""
    pts = [p for p in scatter if p.score == score_name]
    if not pts:
        raise ValidationError(f"no scatter points for score {score_name!r}")
    fig, ax = plt.subplots(figsize=(5, 5))
    lo = min(min(p.actual for p in pts), min(p.predicted for p in pts))
    hi = max(max(p.actual for p in pts), max(p.predicted for p in pts))
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    span = (lo - pad, hi + pad)
    ax.plot(span, span, linestyle="--", color="gray", linewidth=1, zorder=1)
    for split in ("train", "test"):
        xs = [p.actual for p in pts if p.split == split]
        ys = [p.predicted for p in pts if p.split == split]
        if xs:
            style = _SPLIT_STYLE.get(split, _FALLBACK_STYLE)
            ax.scatter(xs, ys, s=18, alpha=0.7, label=split, zorder=2, **style)
    ax.set_xlim(span)
    ax.set_ylim(span)
    ax.set_xlabel("actual score")
    ax.set_ylabel("predicted score")
    ax.set_title(score_name)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def eval_scatter_figure(actual, predicted, score_name, path):
    """Single-split variant used by the standalone evaluation report."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size == 0:
        raise ValidationError(f"no points to plot for score {score_name!r}")
    fig, ax = plt.subplots(figsize=(5, 5))
    lo = float(min(actual.min(), predicted.min()))
    hi = float(max(actual.max(), predicted.max()))
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    span = (lo - pad, hi + pad)
    ax.plot(span, span, linestyle="--", color="gray", linewidth=1, zorder=1)
    ax.scatter(actual, predicted, s=18, alpha=0.7, color="tab:blue", zorder=2)
    ax.set_xlim(span)
    ax.set_ylim(span)
    ax.set_xlabel("actual score")
    ax.set_ylabel("predicted score")
    ax.set_title(score_name)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def trace_figure(trace_rows, path):
    """Objective total and constraint residual per outer iteration."""
    if not trace_rows:
        raise ValidationError("cannot plot an empty objective trace")
    iters = [r.outer_iter for r in trace_rows]
    totals = [r.total for r in trace_rows]
    resids = [r.residual for r in trace_rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(iters, totals, marker="o", color="tab:blue")
    ax1.set_ylabel("objective")
    ax2.plot(iters, resids, marker="o", color="tab:red")
    ax2.set_ylabel("mean constraint residual")
    ax2.set_xlabel("outer iteration")
    if all(r > 0 for r in resids):
        ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
