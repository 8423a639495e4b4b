"""Evaluation metrics: median absolute error and mutual information.

MI uses a histogram plug-in estimator with ceil(sqrt(N)) equal-width
bins per axis over each variable's observed range, reported in nats and
clamped at zero.  Entropy terms are summed in sorted order so the
estimator is exactly symmetric in its arguments.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError


def _paired(actual, predicted, min_len):
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} actual vs {p.shape[0]} predicted")
    if a.shape[0] < min_len:
        raise ValidationError(f"need at least {min_len} pairs, got {a.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise ValidationError("metric inputs must be finite")
    return a, p


def mae(actual, predicted):
    """Median of absolute residuals (even length: mean of central pair)."""
    a, p = _paired(actual, predicted, 1)
    return float(np.median(np.abs(a - p)))


def _entropy(counts, n):
    """Plug-in entropy in nats; terms added smallest-first."""
    counts = counts[counts > 0].ravel()
    terms = -(counts / n) * np.log(counts / n)
    return float(np.sum(np.sort(terms)))


def mutual_information(actual, predicted):
    """Histogram MI between two paired samples, in nats, clamped at 0."""
    a, p = _paired(actual, predicted, 4)
    n = a.shape[0]
    if np.min(a) == np.max(a) or np.min(p) == np.max(p):
        warnings.warn("mutual_information: degenerate (constant) input, returning 0")
        return 0.0
    bins = math.ceil(math.sqrt(n))
    joint, _, _ = np.histogram2d(
        a, p, bins=bins, range=[[np.min(a), np.max(a)], [np.min(p), np.max(p)]]
    )
    h_a = _entropy(joint.sum(axis=1), n)
    h_p = _entropy(joint.sum(axis=0), n)
    h_ap = _entropy(joint, n)
    return max(0.0, h_a + h_p - h_ap)


def shuffled_mi_baseline(actual, predicted, rng, n_shuffles=20):
    """Mean and sample SD of MI against shuffled predictions."""
    a, p = _paired(actual, predicted, 4)
    vals = np.array([mutual_information(a, rng.permutation(p)) for _ in range(n_shuffles)])
    return float(np.mean(vals)), float(np.std(vals, ddof=1))


@dataclass
class MetricsReport:
    """One (fold, split, score) row of the evaluation table."""

    split: str
    fold: int
    score_name: str
    mae: float
    mi: float

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be train or test, got {self.split!r}")
        if self.mae < 0 or (not math.isnan(self.mi) and self.mi < 0):
            raise ValidationError("metrics must be nonnegative")
