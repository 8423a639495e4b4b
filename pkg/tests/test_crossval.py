"""Fold partitions, the cross-validation protocol, and the grid sweep."""

import math

import numpy as np
import pytest

from connbasis.crossval import (
    MEAN_FOLD,
    POOLED_FOLD,
    ScatterPoint,
    aggregate_rows,
    cross_validate,
    fold_assignments,
    gridsearch,
    read_grid,
    write_grid_csv,
    write_metrics_csv,
    write_scatter_csv,
)
from connbasis.data import write_toml
from connbasis.errors import ValidationError
from connbasis.metrics import MetricsReport, mae
from connbasis.model import Hyperparameters
from connbasis.synth import SynthSpec, generate
from connbasis.trainer import AnnSchedule, TrainConfig


def tiny_config(**overrides):
    hp = Hyperparameters(gamma1=0.05, gamma2=0.01, lambda_tradeoff=0.1, k=2)
    defaults = dict(
        hp=hp,
        seed=0,
        outer_max=2,
        prox_lr=1e-2,
        ann=AnnSchedule(epochs=2, batch_size=4, lr0=1e-3),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def tiny_dataset(n=9, seed=3):
    spec = SynthSpec(
        p=8, k_true=2, n=n, m=2, noise_sigma=0.02,
        score_map="linear", seed=seed,
    )
    dataset, _ = generate(spec)
    return dataset


class TestFoldAssignments:
    def test_disjoint_cover(self):
        folds = fold_assignments(23, 5, seed=1)
        joined = np.concatenate(folds)
        assert sorted(joined.tolist()) == list(range(23))
        assert len(joined) == len(set(joined.tolist()))

    def test_balanced_sizes(self):
        sizes = [len(f) for f in fold_assignments(23, 5, seed=1)]
        assert max(sizes) - min(sizes) <= 1

    def test_sorted_within_fold(self):
        for f in fold_assignments(40, 7, seed=9):
            assert np.all(np.diff(f) > 0)

    def test_seed_determinism(self):
        a = fold_assignments(30, 4, seed=5)
        b = fold_assignments(30, 4, seed=5)
        c = fold_assignments(30, 4, seed=6)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_too_few_folds_rejected(self):
        with pytest.raises(ValidationError, match="at least 2"):
            fold_assignments(10, 1, seed=0)

    def test_too_few_subjects_rejected(self):
        with pytest.raises(ValidationError, match="3 subjects into 4"):
            fold_assignments(3, 4, seed=0)


@pytest.fixture(scope="module")
def run():
    dataset = tiny_dataset(n=9)
    reports, scatter = cross_validate(dataset, tiny_config(), folds=3)
    return dataset, reports, scatter


class TestCrossValidate:
    def test_report_structure(self, run):
        dataset, reports, _ = run
        assert len(reports) == 3 * 2 * dataset.m
        for split in ("train", "test"):
            rows = [r for r in reports if r.split == split]
            assert sorted(set(r.fold for r in rows)) == [0, 1, 2]
            assert set(r.score_name for r in rows) == set(dataset.score_names)

    def test_scatter_counts(self, run):
        dataset, _, scatter = run
        test_pts = [p for p in scatter if p.split == "test"]
        train_pts = [p for p in scatter if p.split == "train"]
        # each subject appears in exactly one test fold, per score
        assert len(test_pts) == dataset.n * dataset.m
        assert len(train_pts) == (dataset.n - 3) * 3 * dataset.m

    def test_small_test_fold_mi_is_nan(self, run):
        _, reports, _ = run
        # test folds hold 3 subjects here, below the MI floor of 4 points
        for r in reports:
            if r.split == "test":
                assert math.isnan(r.mi)
            else:
                assert not math.isnan(r.mi)

    def test_determinism(self):
        dataset = tiny_dataset(n=8)
        r1, s1 = cross_validate(dataset, tiny_config(), folds=2)
        r2, s2 = cross_validate(dataset, tiny_config(), folds=2)
        assert r1 == r2
        assert s1 == s2

    def test_seed_changes_results(self):
        dataset = tiny_dataset(n=8)
        _, s1 = cross_validate(dataset, tiny_config(seed=0), folds=2)
        _, s2 = cross_validate(dataset, tiny_config(seed=1), folds=2)
        assert s1 != s2


class TestAggregateRows:
    def hand_reports(self):
        reports = [
            MetricsReport(split="test", fold=0, score_name="a", mae=2.0, mi=0.5),
            MetricsReport(split="test", fold=1, score_name="a", mae=4.0, mi=0.7),
            MetricsReport(split="train", fold=0, score_name="a", mae=1.0, mi=1.0),
            MetricsReport(split="train", fold=1, score_name="a", mae=3.0, mi=2.0),
        ]
        scatter = [
            ScatterPoint(actual=0.0, predicted=1.0, score="a", split="test", fold=0),
            ScatterPoint(actual=0.0, predicted=5.0, score="a", split="test", fold=1),
            ScatterPoint(actual=2.0, predicted=2.0, score="a", split="train", fold=0),
            ScatterPoint(actual=2.0, predicted=4.0, score="a", split="train", fold=1),
        ]
        return reports, scatter

    def test_mean_row_is_fold_mean(self):
        reports, scatter = self.hand_reports()
        rows = aggregate_rows(reports, scatter, ["a"])
        mean_test = next(
            r for r in rows if r["split"] == "test" and r["fold"] == MEAN_FOLD
        )
        assert mean_test["mae"] == 3.0
        assert mean_test["mi"] == pytest.approx(0.6)

    def test_pooled_row_recomputed_from_scatter(self):
        reports, scatter = self.hand_reports()
        rows = aggregate_rows(reports, scatter, ["a"])
        pooled_test = next(
            r for r in rows if r["split"] == "test" and r["fold"] == POOLED_FOLD
        )
        # pooled over the raw points, not a mean of fold maes
        assert pooled_test["mae"] == mae(np.array([0.0, 0.0]), np.array([1.0, 5.0]))
        assert math.isnan(pooled_test["mi"])  # only 2 pooled points

    def test_nan_mi_propagates_into_mean(self):
        reports, scatter = self.hand_reports()
        reports[0] = MetricsReport(
            split="test", fold=0, score_name="a", mae=2.0, mi=float("nan")
        )
        rows = aggregate_rows(reports, scatter, ["a"])
        mean_test = next(
            r for r in rows if r["split"] == "test" and r["fold"] == MEAN_FOLD
        )
        assert math.isnan(mean_test["mi"])


class TestCsvWriters:
    def test_metrics_csv_layout(self, tmp_path):
        reports, scatter = TestAggregateRows().hand_reports()
        path = tmp_path / "metrics.csv"
        write_metrics_csv(reports, scatter, ["a"], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "split,fold,score,mae,mi"
        assert lines[1] == "test,0,a,2.0,0.5"
        # 4 per-fold rows + 2 splits x 1 score x (mean, pooled)
        assert len(lines) == 1 + 4 + 4
        folds = [line.split(",")[1] for line in lines[5:]]
        assert folds == [MEAN_FOLD, POOLED_FOLD, MEAN_FOLD, POOLED_FOLD]

    def test_scatter_csv_layout(self, tmp_path):
        _, scatter = TestAggregateRows().hand_reports()
        path = tmp_path / "scatter.csv"
        write_scatter_csv(scatter, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "actual,predicted,score,split,fold"
        assert lines[1] == "0.0,1.0,a,test,0"
        assert len(lines) == 1 + len(scatter)


class TestGrid:
    def test_read_grid_defaults(self, tmp_path):
        path = tmp_path / "grid.toml"
        write_toml({"grid": {}}, path)
        gamma1, gamma2, lam, folds = read_grid(path)
        assert (gamma1, gamma2, lam, folds) == ([10.0], [0.1], [0.1], 3)

    def test_read_grid_values(self, tmp_path):
        path = tmp_path / "grid.toml"
        write_toml(
            {"grid": {"gamma1": [1.0, 2.0], "gamma2": [0.5], "lambda": [0.0, 0.1], "folds": 4}},
            path,
        )
        gamma1, gamma2, lam, folds = read_grid(path)
        assert gamma1 == [1.0, 2.0]
        assert gamma2 == [0.5]
        assert lam == [0.0, 0.1]
        assert folds == 4

    def test_read_grid_empty_axis_rejected(self, tmp_path):
        path = tmp_path / "grid.toml"
        write_toml({"grid": {"gamma1": []}}, path)
        with pytest.raises(ValidationError, match="non-empty"):
            read_grid(path)

    def test_gridsearch_ranks_by_test_error(self, tmp_path):
        dataset = tiny_dataset(n=8)
        rows = gridsearch(
            dataset, tiny_config(), [0.05, 5.0], [0.01], [0.1], folds=2
        )
        assert len(rows) == 2
        fracs = [r["test_mae_frac"] for r in rows]
        assert fracs == sorted(fracs)
        path = tmp_path / "grid.csv"
        write_grid_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "rank,gamma1,gamma2,lambda,test_mae_frac,test_mi"
        assert lines[1].startswith("1,")
        assert lines[2].startswith("2,")
