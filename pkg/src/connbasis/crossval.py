"""Cross-validation protocol and the hyperparameter grid sweep.

Fold assignment shuffles subjects with the run seed and deals them
round-robin.  Each fold trains from scratch on its training split with a
fold-specific seed, predicts both splits through the QP + network path,
and reports per-score MAE and MI.  Aggregate rows (per-fold mean, and
pooled over all test predictions) are appended to the metric table.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .data import format_float, read_toml
from .errors import ValidationError
from .inference import predict
from .metrics import MetricsReport, mae, mutual_information
from .trainer import fit

MEAN_FOLD = "mean"
POOLED_FOLD = "pooled"


@dataclass
class ScatterPoint:
    """One (subject, score) prediction for the scatter table."""

    actual: float
    predicted: float
    score: str
    split: str
    fold: int


def fold_assignments(n, folds, seed):
    """Shuffled round-robin partition; returns a list of index arrays."""
    if folds < 2:
        raise ValidationError(f"need at least 2 folds, got {folds}")
    if n < folds:
        raise ValidationError(f"cannot split {n} subjects into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(order[f::folds]) for f in range(folds)]


def _safe_mi(actual, predicted):
    if len(actual) < 4:
        return float("nan")
    return mutual_information(actual, predicted)


def cross_validate(dataset, config, folds=10):
    """Run the k-fold protocol; returns (reports, scatter_points).

    Deterministic in config.seed: the same seed reproduces the fold
    assignment, every per-fold fit, and every table row bitwise.
    """
    assignments = fold_assignments(dataset.n, folds, config.seed)
    reports = []
    scatter = []
    for f, test_idx in enumerate(assignments):
        test_set = set(int(i) for i in test_idx)
        train_idx = [i for i in range(dataset.n) if i not in test_set]
        fold_config = replace(config, seed=config.seed + 10_000 * (f + 1))
        state = fit(dataset.subset(train_idx), fold_config)
        for split, indices in (("train", train_idx), ("test", sorted(test_set))):
            preds = np.zeros((len(indices), dataset.m))
            for row, i in enumerate(indices):
                _, yhat = predict(
                    state.x, state.theta, dataset.matrices[i], config.hp.gamma2
                )
                preds[row] = yhat
            actual = dataset.scores[indices]
            for d, name in enumerate(dataset.score_names):
                reports.append(
                    MetricsReport(
                        split=split,
                        fold=f,
                        score_name=name,
                        mae=mae(actual[:, d], preds[:, d]),
                        mi=_safe_mi(actual[:, d], preds[:, d]),
                    )
                )
                for row in range(len(indices)):
                    scatter.append(
                        ScatterPoint(
                            actual=float(actual[row, d]),
                            predicted=float(preds[row, d]),
                            score=name,
                            split=split,
                            fold=f,
                        )
                    )
    return reports, scatter


def aggregate_rows(reports, scatter, score_names):
    """Mean-over-folds and pooled-over-subjects rows, per split and score."""
    out = []
    for split in ("train", "test"):
        for name in score_names:
            fold_rows = [r for r in reports if r.split == split and r.score_name == name]
            maes = np.array([r.mae for r in fold_rows])
            mis = np.array([r.mi for r in fold_rows])
            out.append(
                {
                    "split": split,
                    "fold": MEAN_FOLD,
                    "score": name,
                    "mae": float(np.mean(maes)),
                    "mi": float(np.mean(mis)),
                }
            )
            pts = [p for p in scatter if p.split == split and p.score == name]
            actual = np.array([p.actual for p in pts])
            predicted = np.array([p.predicted for p in pts])
            out.append(
                {
                    "split": split,
                    "fold": POOLED_FOLD,
                    "score": name,
                    "mae": mae(actual, predicted),
                    "mi": _safe_mi(actual, predicted),
                }
            )
    return out


def write_metrics_csv(reports, scatter, score_names, path):
    """Per-fold rows then aggregate rows, as delimited text."""
    with open(path, "w") as fh:
        fh.write("split,fold,score,mae,mi\n")
        for r in reports:
            fh.write(
                f"{r.split},{r.fold},{r.score_name},"
                f"{format_float(r.mae)},{format_float(r.mi)}\n"
            )
        for row in aggregate_rows(reports, scatter, score_names):
            fh.write(
                f"{row['split']},{row['fold']},{row['score']},"
                f"{format_float(row['mae'])},{format_float(row['mi'])}\n"
            )


def write_scatter_csv(scatter, path):
    with open(path, "w") as fh:
        fh.write("actual,predicted,score,split,fold\n")
        for p in scatter:
            fh.write(
                f"{format_float(p.actual)},{format_float(p.predicted)},"
                f"{p.score},{p.split},{p.fold}\n"
            )


def read_grid(path):
    """Grid declaration: [grid] tables of candidate hyperparameter values."""
    doc = read_toml(path)
    grid = doc.get("grid", {})
    gamma1 = [float(v) for v in grid.get("gamma1", [10.0])]
    gamma2 = [float(v) for v in grid.get("gamma2", [0.1])]
    lam = [float(v) for v in grid.get("lambda", [0.1])]
    folds = int(grid.get("folds", 3))
    if not gamma1 or not gamma2 or not lam:
        raise ValidationError(f"{path}: grid axes must be non-empty")
    return gamma1, gamma2, lam, folds


def gridsearch(dataset, config, gamma1s, gamma2s, lambdas, folds=3):
    """Sweep (gamma1, gamma2, lambda); returns rows ranked by test error.

    Rank key is mean test MAE as a fraction of each score's declared
    range, averaged over scores.  The table is returned fully ordered;
    nothing is auto-selected.
    """
    rows = []
    spans = [hi - lo for lo, hi in dataset.score_ranges]
    for g1, g2, lam in itertools.product(gamma1s, gamma2s, lambdas):
        hp = replace(config.hp, gamma1=g1, gamma2=g2, lambda_tradeoff=lam)
        cell_config = replace(config, hp=hp)
        reports, scatter = cross_validate(dataset, cell_config, folds=folds)
        agg = aggregate_rows(reports, scatter, dataset.score_names)
        test_means = [r for r in agg if r["split"] == "test" and r["fold"] == MEAN_FOLD]
        frac = float(
            np.mean([r["mae"] / span for r, span in zip(test_means, spans)])
        )
        mi_vals = [r["mi"] for r in test_means if not math.isnan(r["mi"])]
        rows.append(
            {
                "gamma1": g1,
                "gamma2": g2,
                "lambda": lam,
                "test_mae_frac": frac,
                "test_mi": float(np.mean(mi_vals)) if mi_vals else float("nan"),
            }
        )
    rows.sort(key=lambda r: (r["test_mae_frac"], r["gamma1"], r["gamma2"], r["lambda"]))
    return rows


def write_grid_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("rank,gamma1,gamma2,lambda,test_mae_frac,test_mi\n")
        for rank, r in enumerate(rows, start=1):
            fh.write(
                f"{rank},{format_float(r['gamma1'])},{format_float(r['gamma2'])},"
                f"{format_float(r['lambda'])},{format_float(r['test_mae_frac'])},"
                f"{format_float(r['test_mi'])}\n"
            )
