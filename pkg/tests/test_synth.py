"""Tests for planted-cohort generation and basis matching."""

import json

import numpy as np
import pytest

from connbasis.errors import DimensionError, ValidationError
from connbasis.model import Hyperparameters, dictionary_objective
from connbasis.synth import (
    SynthSpec,
    generate,
    match_bases,
    match_bases_brute,
    matched_loading_correlations,
    write_ground_truth,
)


class TestSynthSpec:
    def test_defaults(self):
        spec = SynthSpec()
        assert (spec.p, spec.k_true, spec.n, spec.m) == (30, 4, 52, 3)
        assert spec.score_map == "mlp"

    def test_ranges_cycle(self):
        assert SynthSpec(m=4).ranges()[3] == (0.0, 30.0)

    def test_invalid_specs(self):
        with pytest.raises(ValidationError):
            SynthSpec(k_true=0)
        with pytest.raises(ValidationError):
            SynthSpec(sparsity=0.0)
        with pytest.raises(ValidationError):
            SynthSpec(noise_sigma=-1.0)
        with pytest.raises(ValidationError):
            SynthSpec(score_map="rbf")


class TestGenerate:
    def test_same_seed_bitwise_identical(self):
        a, ta = generate(SynthSpec(p=10, k_true=2, n=6, seed=5))
        b, tb = generate(SynthSpec(p=10, k_true=2, n=6, seed=5))
        np.testing.assert_array_equal(a.scores, b.scores)
        np.testing.assert_array_equal(ta.x_true, tb.x_true)
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(ma.data, mb.data)

    def test_noiseless_rank_and_objective(self):
        spec = SynthSpec(p=12, k_true=3, n=5, noise_sigma=0.0, score_noise_sigma=0.0, seed=1)
        ds, truth = generate(spec)
        hp = Hyperparameters(gamma1=0.0, gamma2=0.0)
        gammas = [cm.data for cm in ds.matrices]
        cs = [truth.c_true[i] for i in range(spec.n)]
        assert dictionary_objective(truth.x_true, cs, gammas, hp) == 0.0
        for g in gammas:
            vals = np.sort(np.abs(np.linalg.eigvalsh(g)))[::-1]
            assert np.all(vals[3:] < 1e-12)

    def test_matrices_exactly_symmetric(self):
        ds, _ = generate(SynthSpec(p=9, k_true=2, n=4, seed=2))
        for cm in ds.matrices:
            np.testing.assert_array_equal(cm.data, cm.data.T)

    def test_noiseless_matrices_psd(self):
        ds, _ = generate(SynthSpec(p=9, k_true=2, n=4, noise_sigma=0.0, seed=3))
        for cm in ds.matrices:
            assert np.min(np.linalg.eigvalsh(cm.data)) >= -1e-10

    def test_planted_basis_structure(self):
        spec = SynthSpec(seed=4)
        _, truth = generate(spec)
        nnz = int(round(spec.sparsity * spec.p))
        for k in range(spec.k_true):
            col = truth.x_true[:, k]
            assert np.count_nonzero(col) == nnz
            assert np.linalg.norm(col) == pytest.approx(1.0, rel=1e-12)
        assert np.all(truth.c_true >= 0)

    def test_default_scores_within_declared_ranges(self):
        ds, _ = generate(SynthSpec(seed=6))
        for d, (lo, hi) in enumerate(ds.score_ranges):
            col = ds.scores[:, d]
            assert np.min(col) == lo
            assert np.max(col) == hi
            assert np.all((col >= lo) & (col <= hi))

    def test_rescale_matches_dataset_scores(self):
        spec = SynthSpec(p=10, k_true=2, n=8, score_noise_sigma=0.0, seed=7)
        ds, truth = generate(spec)
        for i in range(spec.n):
            want = truth.score_map.rescale(truth.score_map.raw(truth.c_true[i]))
            np.testing.assert_allclose(ds.scores[i], want, rtol=1e-9, atol=1e-9)

    def test_linear_map_supported(self):
        ds, truth = generate(SynthSpec(p=8, k_true=2, n=6, score_map="linear", seed=8))
        assert truth.score_map.kind == "linear"
        assert ds.scores.shape == (6, 3)


class TestGroundTruthSidecar:
    def test_deterministic_and_parseable(self, tmp_path):
        _, truth = generate(SynthSpec(p=8, k_true=2, n=5, seed=9))
        p1, p2 = tmp_path / "t1.json", tmp_path / "t2.json"
        write_ground_truth(truth, p1)
        write_ground_truth(truth, p2)
        assert p1.read_bytes() == p2.read_bytes()
        payload = json.loads(p1.read_text())
        assert np.asarray(payload["x_true"]).shape == (8, 2)
        assert payload["score_map"]["kind"] == "mlp"


class TestMatchBases:
    def test_identity(self):
        rng = np.random.default_rng(80)
        x = rng.normal(size=(10, 4))
        perm, signs, score = match_bases(x, x)
        np.testing.assert_array_equal(perm, np.arange(4))
        np.testing.assert_array_equal(signs, np.ones(4))
        assert score == pytest.approx(1.0, rel=1e-12)

    def test_permuted_and_negated(self):
        rng = np.random.default_rng(81)
        x = rng.normal(size=(10, 4))
        order = np.array([2, 0, 3, 1])
        flip = np.array([1.0, -1.0, -1.0, 1.0])
        x_est = x[:, order] * flip
        perm, signs, score = match_bases(x_est, x)
        assert score == pytest.approx(1.0, rel=1e-12)
        # est column perm[j] must be the one holding true column j
        np.testing.assert_array_equal(order[perm], np.arange(4))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(82)
        for _ in range(15):
            k = int(rng.integers(2, 6))
            a = rng.normal(size=(8, k))
            b = rng.normal(size=(8, k))
            _, _, score = match_bases(a, b)
            assert score == pytest.approx(match_bases_brute(a, b), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            match_bases(np.zeros((5, 2)), np.zeros((5, 3)))


class TestMatchedLoadingCorrelations:
    def test_perfect_match(self):
        rng = np.random.default_rng(83)
        c = np.abs(rng.normal(size=(6, 4))) + 0.1
        out = matched_loading_correlations(c, c, np.arange(4))
        np.testing.assert_allclose(out, np.ones(6), rtol=1e-12)

    def test_permutation_respected(self):
        rng = np.random.default_rng(84)
        c_true = np.abs(rng.normal(size=(5, 3))) + 0.1
        order = np.array([1, 2, 0])
        # est column order[j] holds true column j, so perm = order
        c_est = np.zeros_like(c_true)
        c_est[:, order] = c_true
        out = matched_loading_correlations(c_est, c_true, order)
        np.testing.assert_allclose(out, np.ones(5), rtol=1e-12)

    def test_constant_row_gives_zero(self):
        c_true = np.ones((2, 3))
        c_est = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        out = matched_loading_correlations(c_est, c_true, np.arange(3))
        np.testing.assert_array_equal(out, np.zeros(2))
