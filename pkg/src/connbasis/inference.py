"""Out-of-sample loading estimation and score prediction.

A held-out correlation matrix never touches the alternating trainer.
Its loadings come from a small nonnegativity-constrained quadratic
program built from the frozen basis, and scores follow by one forward
pass through the frozen network.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .model import _as_matrix
from .network import forward

KKT_TOL = 1e-10
MAX_QP_ITERS = 10_000


@dataclass
class QpProblem:
    """min over c >= 0 of 0.5 c^T h c + f^T c."""

    h: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.h.ndim != 2 or self.h.shape[0] != self.h.shape[1]:
            raise DimensionError(f"quadratic term must be square, got {self.h.shape}")
        if self.f.shape != (self.h.shape[0],):
            raise DimensionError(
                f"linear term {self.f.shape} does not match quadratic term {self.h.shape}"
            )
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.f))):
            raise ValidationError("QP coefficients must be finite")
        if np.max(np.abs(self.h - self.h.T), initial=0.0) > 1e-10:
            raise ValidationError("quadratic term must be symmetric to 1e-10")


def qp_objective(problem, c):
    """Objective value 0.5 c^T h c + f^T c."""
    c = np.asarray(c, dtype=float)
    return 0.5 * float(c @ (problem.h @ c)) + float(problem.f @ c)


def kkt_residual(problem, c):
    """Largest first-order optimality violation at a feasible point.

    For strictly positive coordinates the gradient must vanish; at the
    boundary it only needs to be nonnegative.
    """
    c = np.asarray(c, dtype=float)
    g = problem.h @ c + problem.f
    r = np.where(c > 0, g, np.minimum(g, 0.0))
    return float(np.max(np.abs(r), initial=0.0))


def assemble_qp(x, gamma, gamma2):
    """Quadratic program whose minimizer fits loadings to one matrix.

    Expanding ||gamma - x diag(c) x^T||_F^2 + gamma2 ||c||^2 in c gives
    h = 2 (x^T x) o (x^T x) + 2 gamma2 I and f_k = -2 (x^T gamma x)_kk,
    with o the elementwise product.
    """
    x = np.asarray(x, dtype=float)
    g = _as_matrix(gamma)
    if x.ndim != 2:
        raise DimensionError(f"basis must be 2-D, got shape {x.shape}")
    if gamma2 < 0:
        raise ValidationError(f"gamma2 must be >= 0, got {gamma2}")
    if g.shape[0] != x.shape[0]:
        raise DimensionError(f"matrix {g.shape} does not match basis {x.shape}")
    gram = x.T @ x
    gram = (gram + gram.T) / 2.0
    k = x.shape[1]
    h = 2.0 * (gram * gram) + 2.0 * gamma2 * np.eye(k)
    f = -2.0 * np.einsum("ik,ij,jk->k", x, g, x)
    return QpProblem(h=h, f=f)


def solve_qp(problem, tol=KKT_TOL, max_iters=MAX_QP_ITERS):
    """Minimize the QP over the nonnegative orthant.

    Projected gradient with an exact line search does the bulk of the
    descent; once the active set settles, an equality solve on the free
    coordinates snaps the iterate to the exact minimizer.  The loop stops
    when the optimality residual drops below tol.
    """
    h, f = problem.h, problem.f
    try:
        np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        raise ValidationError("quadratic term must be positive definite") from None
    k = f.shape[0]
    c = np.zeros(k)
    for _ in range(max_iters):
        g = h @ c + f
        if kkt_residual(problem, c) <= tol:
            break
        d = -g
        d[(c <= 0) & (g > 0)] = 0.0
        dhd = float(d @ (h @ d))
        if dhd > 0:
            alpha = float(d @ d) / dhd
            shrinking = d < 0
            if np.any(shrinking):
                alpha = min(alpha, float(np.min(c[shrinking] / -d[shrinking])))
            c = np.maximum(c + alpha * d, 0.0)
        free = c > 0
        if np.any(free):
            sub = np.linalg.solve(h[np.ix_(free, free)], -f[free])
            if np.all(sub >= 0):
                trial = np.zeros(k)
                trial[free] = sub
                if qp_objective(problem, trial) <= qp_objective(problem, c):
                    c = trial
    return c


def predict(x, theta, gamma, gamma2):
    """Loadings and scores for one held-out correlation matrix.

    Returns (c, yhat) where c solves the nonnegative QP for gamma under
    the frozen basis x and yhat = forward(theta, c).  gamma2 must be the
    strictly positive value the model was trained with; without it the
    QP can lose strict convexity.
    """
    if gamma2 <= 0:
        raise ValidationError(f"gamma2 must be > 0 at prediction time, got {gamma2}")
    c = solve_qp(assemble_qp(x, gamma, gamma2))
    return c, forward(theta, c)
