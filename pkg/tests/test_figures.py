"""Figure rendering smoke tests: files appear, are PNG, and are non-trivial."""

import numpy as np
import pytest

from connbasis.crossval import ScatterPoint
from connbasis.errors import ValidationError
from connbasis.figures import eval_scatter_figure, scatter_figure, trace_figure
from connbasis.trainer import TraceRow

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def sample_scatter():
    rng = np.random.default_rng(0)
    pts = []
    for split in ("train", "test"):
        for _ in range(12):
            a = float(rng.uniform(0, 30))
            pts.append(
                ScatterPoint(
                    actual=a,
                    predicted=a + float(rng.normal(scale=2.0)),
                    score="alpha",
                    split=split,
                    fold=0,
                )
            )
    return pts


def assert_png(path):
    blob = path.read_bytes()
    assert blob.startswith(PNG_MAGIC)
    assert len(blob) > 1000


def test_scatter_figure_writes_png(tmp_path):
    path = tmp_path / "scatter.png"
    scatter_figure(sample_scatter(), "alpha", path)
    assert_png(path)


def test_scatter_figure_unknown_score_rejected(tmp_path):
    with pytest.raises(ValidationError, match="no scatter points"):
        scatter_figure(sample_scatter(), "missing", tmp_path / "x.png")


def test_eval_scatter_figure_writes_png(tmp_path):
    rng = np.random.default_rng(1)
    actual = rng.uniform(0, 100, size=20)
    predicted = actual + rng.normal(scale=5.0, size=20)
    path = tmp_path / "eval.png"
    eval_scatter_figure(actual, predicted, "beta", path)
    assert_png(path)


def test_trace_figure_writes_png(tmp_path):
    rows = [
        TraceRow(outer_iter=i + 1, dict_term=10.0 / (i + 1), ann_term=1.0,
                 lagrangian_term=0.1, residual=0.5 ** i)
        for i in range(6)
    ]
    path = tmp_path / "trace.png"
    trace_figure(rows, path)
    assert_png(path)


def test_trace_figure_empty_rejected(tmp_path):
    with pytest.raises(ValidationError, match="empty"):
        trace_figure([], tmp_path / "trace.png")
