"""Core factorization model: data types and objective terms.

A cohort of symmetric correlation matrices Gamma_n (P x P) is factorized
through a shared basis X (P x K) and per-subject nonnegative loadings
c_n (K,) as Gamma_n ~ X diag(c_n) X^T.  The fit objective is

    sum_n [ ||Gamma_n - X diag(c_n) X^T||_F^2 + gamma2 ||c_n||_2^2 ]
        + gamma1 ||X||_1

The trainer works with a split form in which each data term carries an
auxiliary variable V_n constrained to equal X diag(c_n); the constraint is
enforced with a dual matrix Lambda_n plus a quadratic penalty.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class Hyperparameters:
    """Regularization weights and basis size.

    gamma1 weighs the l1 penalty on the basis, gamma2 the l2 penalty on
    the loadings, lambda_tradeoff the squared-error loss of the score
    network, and k is the number of basis columns.
    """

    gamma1: float = 10.0
    gamma2: float = 0.1
    lambda_tradeoff: float = 0.1
    k: int = 8

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "lambda_tradeoff"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


@dataclass
class CorrelationMatrix:
    """One subject's symmetric P x P correlation (residual) matrix."""

    data: np.ndarray
    subject_id: str

    @classmethod
    def from_raw(cls, data, subject_id, tol=SYMMETRY_TOL):
        """Validate and symmetrize raw input as (A + A^T) / 2.

        Rejects non-square or non-finite input, and asymmetry beyond tol.
        """
        a = np.asarray(data, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(
                f"subject {subject_id!r}: expected a square matrix, got shape {a.shape}"
            )
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"subject {subject_id!r}: matrix has non-finite entries")
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > tol:
            raise ValidationError(
                f"subject {subject_id!r}: matrix asymmetry {asym:.3e} exceeds tolerance {tol:.1e}"
            )
        return cls(data=(a + a.T) / 2.0, subject_id=subject_id)

    @property
    def p(self):
        return self.data.shape[0]


@dataclass
class ConstraintState:
    """Split variable V_n and dual matrix Lambda_n for one subject (P x K)."""

    v: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        if self.v.shape != self.lam.shape:
            raise DimensionError(
                f"split/dual shape mismatch: {self.v.shape} vs {self.lam.shape}"
            )


def _as_matrix(gamma):
    """Accept either a CorrelationMatrix or a bare array."""
    return gamma.data if isinstance(gamma, CorrelationMatrix) else np.asarray(gamma, dtype=float)


def reconstruct(x, c):
    """Return X diag(c) X^T, the rank-K model of one subject's matrix.

    The product is symmetrized so the result is symmetric to the bit,
    not merely to rounding error.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.ndim != 2 or c.ndim != 1 or x.shape[1] != c.shape[0]:
        raise DimensionError(f"basis {x.shape} incompatible with loadings {c.shape}")
    a = (x * c) @ x.T
    return (a + a.T) / 2.0


def dictionary_objective(x, cs, gammas, hp):
    """Evaluate the full factorization objective.

    sum_n [ ||Gamma_n - X diag(c_n) X^T||_F^2 + gamma2 ||c_n||^2 ]
        + gamma1 ||X||_1
    """
    x = np.asarray(x, dtype=float)
    if len(cs) != len(gammas):
        raise DimensionError(f"{len(cs)} loading vectors but {len(gammas)} matrices")
    total = 0.0
    for c, gamma in zip(cs, gammas):
        g = _as_matrix(gamma)
        if g.shape[0] != x.shape[0]:
            raise DimensionError(f"matrix {g.shape} incompatible with basis {x.shape}")
        resid = g - reconstruct(x, c)
        total += np.sum(resid * resid) + hp.gamma2 * float(np.dot(c, c))
    return total + hp.gamma1 * np.sum(np.abs(x))


def augmented_objective(x, cs, gammas, states, hp):
    """Evaluate the split-form objective used by the trainer.

    Each data term is taken in the substituted form ||Gamma_n - V_n X^T||_F^2
    and the constraint V_n = X diag(c_n) contributes
    tr[Lambda_n^T (V_n - X diag(c_n))] + 0.5 ||V_n - X diag(c_n)||_F^2.
    Equals dictionary_objective whenever every V_n sits on the constraint.
    """
    x = np.asarray(x, dtype=float)
    if not (len(cs) == len(gammas) == len(states)):
        raise DimensionError(
            f"per-subject list lengths differ: {len(cs)}, {len(gammas)}, {len(states)}"
        )
    total = 0.0
    for c, gamma, st in zip(cs, gammas, states):
        g = _as_matrix(gamma)
        if st.v.shape != x.shape:
            raise DimensionError(f"split variable {st.v.shape} incompatible with basis {x.shape}")
        resid = g - st.v @ x.T
        gap = st.v - x * np.asarray(c, dtype=float)
        total += (
            np.sum(resid * resid)
            + hp.gamma2 * float(np.dot(c, c))
            + np.sum(st.lam * gap)
            + 0.5 * np.sum(gap * gap)
        )
    return total + hp.gamma1 * np.sum(np.abs(x))


def soft_threshold(values, tau):
    """Shrinkage operator sign(v) * max(|v| - tau, 0), elementwise."""
    if tau < 0:
        raise ValidationError(f"threshold must be >= 0, got {tau}")
    v = np.asarray(values, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _leading_eigenpair(sym):
    """Largest-eigenvalue pair of a symmetric matrix.

    Sign convention: first nonzero eigenvector component made positive, so
    degenerate spectra still resolve reproducibly.
    """
    vals, vecs = np.linalg.eigh(sym)
    v = vecs[:, -1]
    nz = np.nonzero(v)[0]
    if nz.size and v[nz[0]] < 0:
        v = -v
    return vals[-1], v


def eigen_residualize(gamma, tol=SYMMETRY_TOL):
    """Subtract the leading eigencomponent: Gamma - lambda1 v1 v1^T.

    Removes the dominant (roughly global) mode so the remaining structure
    drives the factorization.  Input must be symmetric within tol.
    """
    g = _as_matrix(gamma)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {g.shape}")
    if np.max(np.abs(g - g.T)) > tol:
        raise ValidationError("matrix is not symmetric; cannot residualize")
    g = (g + g.T) / 2.0
    lam1, v1 = _leading_eigenpair(g)
    out = g - lam1 * np.outer(v1, v1)
    if isinstance(gamma, CorrelationMatrix):
        return CorrelationMatrix(data=out, subject_id=gamma.subject_id)
    return out


def knee_point_k(gammas, k_max):
    """Pick the basis size at the knee of the pooled eigenvalue spectrum.

    The spectrum of each matrix is taken in absolute value and sorted
    descending; spectra are averaged across subjects.  On that mean
    spectrum s (0-indexed) the knee is the position j maximizing the
    discrete curvature s[j-1] - 2 s[j] + s[j+1], searched over
    1 <= j <= min(k_max, P - 2); j counts the components kept before the
    bend, so the return value is j itself.  Ties resolve to the smallest j.
    """
    if len(gammas) == 0:
        raise ValidationError("need at least one matrix to locate a spectrum knee")
    if k_max < 1:
        raise ValidationError(f"k_max must be >= 1, got {k_max}")
    spectra = []
    for gamma in gammas:
        g = _as_matrix(gamma)
        vals = np.abs(np.linalg.eigvalsh(g))
        spectra.append(np.sort(vals)[::-1])
    s = np.mean(spectra, axis=0)
    hi = min(k_max, s.size - 2)
    if hi < 1:
        return 1
    j = np.arange(1, hi + 1)
    curvature = s[j - 1] - 2.0 * s[j] + s[j + 1]
    return int(j[np.argmax(curvature)])
