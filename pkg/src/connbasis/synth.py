"""Planted-model synthetic cohorts.

Generates datasets from a known sparse basis and nonnegative loadings so
recovery can be scored exactly: Gamma_n = X* diag(c*_n) X*^T plus
symmetric Gaussian noise, and score vectors produced by a fixed random
map of the loadings, rescaled into realistic per-measure ranges.

The noise is NOT projected back to positive semidefinite: the model
never requires PSD input, and first-eigenvector residualization of real
data breaks PSD anyway.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset, canonical_json, read_toml
from .errors import DimensionError, ValidationError
from .model import CorrelationMatrix, reconstruct

DEFAULT_SCORE_RANGES = ((0.0, 30.0), (70.0, 200.0), (0.0, 100.0))
_MLP_HIDDEN = 16


@dataclass(frozen=True)
class SynthSpec:
    """Shape, sparsity, noise, and score-map choices for one cohort."""

    p: int = 30
    k_true: int = 4
    n: int = 52
    m: int = 3
    sparsity: float = 0.3
    noise_sigma: float = 0.05
    score_noise_sigma: float = 0.02
    seed: int = 0
    score_map: str = "mlp"

    def __post_init__(self):
        if not 1 <= self.k_true <= self.p:
            raise ValidationError(f"need 1 <= k_true <= p, got k_true={self.k_true}, p={self.p}")
        if not 0 < self.sparsity <= 1:
            raise ValidationError(f"sparsity must be in (0, 1], got {self.sparsity}")
        if self.noise_sigma < 0 or self.score_noise_sigma < 0:
            raise ValidationError("noise standard deviations must be >= 0")
        if self.n < 1 or self.m < 1:
            raise ValidationError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        if self.score_map not in ("linear", "mlp"):
            raise ValidationError(f"score_map must be 'linear' or 'mlp', got {self.score_map!r}")

    def ranges(self):
        """Declared (lo, hi) per score dimension, cycling the defaults."""
        return [DEFAULT_SCORE_RANGES[d % len(DEFAULT_SCORE_RANGES)] for d in range(self.m)]


@dataclass
class ScoreMap:
    """Fixed random map from loadings to raw scores plus range rescaling."""

    kind: str
    weights: dict
    shift: np.ndarray
    scale: np.ndarray
    ranges: list

    def raw(self, c):
        c = np.asarray(c, dtype=float)
        if self.kind == "linear":
            return self.weights["w"] @ c + self.weights["b"]
        h = np.tanh(self.weights["w1"] @ c + self.weights["b1"])
        return self.weights["w2"] @ h + self.weights["b2"]

    def rescale(self, z):
        """Affine map of raw scores into the declared ranges."""
        z = np.asarray(z, dtype=float)
        return self.shift + self.scale * z


@dataclass
class GroundTruth:
    """Everything needed to score recovery of a planted dataset."""

    x_true: np.ndarray
    c_true: np.ndarray
    score_map: ScoreMap


def _draw_score_map(spec, rng):
    k = spec.k_true
    if spec.score_map == "linear":
        weights = {
            "w": rng.normal(size=(spec.m, k)) / np.sqrt(k),
            "b": rng.normal(size=spec.m),
        }
    else:
        weights = {
            "w1": rng.normal(size=(_MLP_HIDDEN, k)) / np.sqrt(k),
            "b1": rng.normal(size=_MLP_HIDDEN),
            "w2": rng.normal(size=(spec.m, _MLP_HIDDEN)) / np.sqrt(_MLP_HIDDEN),
            "b2": rng.normal(size=spec.m),
        }
    return ScoreMap(
        kind=spec.score_map,
        weights=weights,
        shift=np.zeros(spec.m),
        scale=np.ones(spec.m),
        ranges=spec.ranges(),
    )


def generate(spec):
    """Draw one planted cohort; returns (Dataset, GroundTruth).

    Bitwise-deterministic in the seed.  With both sigmas at zero the
    matrices are exactly rank <= k_true and the scores are a pure
    function of the planted loadings.
    """
    rng = np.random.default_rng(spec.seed)

    x_true = np.zeros((spec.p, spec.k_true))
    nnz = max(1, int(round(spec.sparsity * spec.p)))
    for k in range(spec.k_true):
        support = rng.choice(spec.p, size=nnz, replace=False)
        col = rng.normal(size=nnz)
        x_true[support, k] = col / np.linalg.norm(col)

    c_true = np.abs(rng.normal(loc=1.0, scale=0.5, size=(spec.n, spec.k_true)))

    matrices = []
    for i in range(spec.n):
        g = reconstruct(x_true, c_true[i])
        if spec.noise_sigma > 0:
            e = rng.normal(size=(spec.p, spec.p))
            g = g + spec.noise_sigma * (e + e.T) / 2.0
        matrices.append(CorrelationMatrix(data=g, subject_id=f"s{i + 1:03d}"))

    score_map = _draw_score_map(spec, rng)
    z = np.stack([score_map.raw(c_true[i]) for i in range(spec.n)])
    if spec.score_noise_sigma > 0:
        z = z + spec.score_noise_sigma * rng.normal(size=z.shape)

    # per-dimension affine map onto the declared range; the cohort extremes
    # land exactly on the endpoints
    shift = np.zeros(spec.m)
    scale = np.ones(spec.m)
    for d, (lo, hi) in enumerate(score_map.ranges):
        zmin, zmax = float(np.min(z[:, d])), float(np.max(z[:, d]))
        if zmax > zmin:
            scale[d] = (hi - lo) / (zmax - zmin)
            shift[d] = lo - scale[d] * zmin
            z[:, d] = lo + (hi - lo) * ((z[:, d] - zmin) / (zmax - zmin))
        else:
            scale[d] = 0.0
            shift[d] = (lo + hi) / 2.0
            z[:, d] = shift[d]
    score_map.shift, score_map.scale = shift, scale

    dataset = Dataset(
        subject_ids=[f"s{i + 1:03d}" for i in range(spec.n)],
        matrices=matrices,
        scores=z,
        score_names=[f"score_{d + 1}" for d in range(spec.m)],
        score_ranges=score_map.ranges,
    )
    return dataset, GroundTruth(x_true=x_true, c_true=c_true, score_map=score_map)


_SPEC_KEYS = (
    "p", "k_true", "n", "m", "sparsity",
    "noise_sigma", "score_noise_sigma", "seed", "score_map",
)


def read_synth_spec(path):
    """Load a SynthSpec from a [synth] table; absent keys keep defaults."""
    doc = read_toml(path).get("synth", {})
    unknown = set(doc) - set(_SPEC_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown synth keys: {', '.join(sorted(unknown))}")
    return SynthSpec(**{k: doc[k] for k in _SPEC_KEYS if k in doc})


def write_ground_truth(truth, path):
    """Sidecar with the planted factors, as deterministic JSON."""
    payload = {
        "x_true": truth.x_true.tolist(),
        "c_true": truth.c_true.tolist(),
        "score_map": {
            "kind": truth.score_map.kind,
            "weights": {k: np.asarray(v).tolist() for k, v in truth.score_map.weights.items()},
            "shift": truth.score_map.shift.tolist(),
            "scale": truth.score_map.scale.tolist(),
            "ranges": [[float(lo), float(hi)] for lo, hi in truth.score_map.ranges],
        },
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(payload) + "\n")


def _abs_cosine_table(x_est, x_true):
    x_est = np.asarray(x_est, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_est.shape != x_true.shape:
        raise DimensionError(f"basis shapes differ: {x_est.shape} vs {x_true.shape}")
    en = np.linalg.norm(x_est, axis=0)
    tn = np.linalg.norm(x_true, axis=0)
    dots = x_est.T @ x_true
    denom = np.outer(en, tn)
    table = np.zeros_like(dots)
    ok = denom > 0
    table[ok] = dots[ok] / denom[ok]
    return table


def match_bases(x_est, x_true):
    """Best column matching under the sign/permutation ambiguity.

    Returns (perm, signs, mean_abs_cosine): perm[j] is the estimated
    column assigned to true column j, signs[j] the sign of their inner
    product, and the score the mean of |cosine| over matched pairs.
    """
    table = _abs_cosine_table(x_est, x_true)
    est_idx, true_idx = linear_sum_assignment(-np.abs(table))
    perm = np.empty(table.shape[0], dtype=int)
    perm[true_idx] = est_idx
    signs = np.where(np.sign(table[perm, np.arange(len(perm))]) < 0, -1.0, 1.0)
    mean_abs = float(np.mean(np.abs(table[perm, np.arange(len(perm))])))
    return perm, signs, mean_abs


def match_bases_brute(x_est, x_true):
    """Exhaustive-permutation reference for small K."""
    table = np.abs(_abs_cosine_table(x_est, x_true))
    k = table.shape[0]
    best = -1.0
    for perm in permutations(range(k)):
        score = float(np.mean([table[perm[j], j] for j in range(k)]))
        best = max(best, score)
    return best


def matched_loading_correlations(c_est, c_true, perm):
    """Per-subject Pearson correlation of matched loading vectors."""
    c_est = np.asarray(c_est, dtype=float)
    c_true = np.asarray(c_true, dtype=float)
    if c_est.shape != c_true.shape:
        raise DimensionError(f"loading shapes differ: {c_est.shape} vs {c_true.shape}")
    out = np.zeros(c_est.shape[0])
    for i in range(c_est.shape[0]):
        a = c_est[i, perm]
        b = c_true[i]
        sa, sb = np.std(a), np.std(b)
        out[i] = float(np.corrcoef(a, b)[0, 1]) if sa > 0 and sb > 0 else 0.0
    return out
