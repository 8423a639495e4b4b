"""Alternating minimization over (X, Theta, {c_n}, {V_n, Lambda_n}).

Each outer iteration runs four blocks in order: a proximal gradient
step on the basis X, mini-batch ADAM on the network weights, a
bound-constrained quasi-Newton pass per subject on the loadings, and a
closed-form split-variable update with dual ascent.  Every primal block
either provably cannot increase its part of the objective or is guarded
by an accept-only-if-not-worse check.  The dual ascent raises the
objective by design, so its step is damped: the raw multiplier update
is scaled back until the full objective stays within the descent budget
the primal blocks banked this iteration, which keeps the recorded trace
non-increasing while the multipliers still converge.
"""

import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .data import format_float, read_toml, write_toml
from .errors import NumericalDivergenceError, ValidationError
from .model import ConstraintState, Hyperparameters, augmented_objective, soft_threshold
from .network import AnnSchedule, NetworkWeights, backprop_input, network_loss, train_theta

MAX_BACKTRACK_HALVINGS = 20
MAX_DUAL_CYCLES = 25
DUAL_RESIDUAL_TOL = 1e-6
DUAL_SPEND = 0.9
DUAL_SLACK = 5e-9
MAX_DUAL_DAMPINGS = 40
SUBPROBLEM_MAX_ITERS = 100
PROJECTED_GRAD_TOL = 1e-6
CURVATURE_SKIP_FACTOR = 1e-10
CONDITION_WARN = 1e12


@dataclass(frozen=True)
class TrainConfig:
    """Step sizes, inner-loop budgets, and stopping rules for fit()."""

    hp: Hyperparameters = field(default_factory=Hyperparameters)
    prox_lr: float = 1e-4
    dual_lr0: float = 1e-4
    dual_decay: float = 0.75
    lbfgs_memory: int = 10
    lbfgs_max_iter: int = 20
    delta_step: float = 0.9
    outer_max: int = 50
    outer_tol: float = 1e-5
    seed: int = 0
    ann: AnnSchedule = field(default_factory=AnnSchedule)

    def __post_init__(self):
        if self.prox_lr <= 0 or self.dual_lr0 <= 0:
            raise ValidationError("prox_lr and dual_lr0 must be > 0")
        if not 0 < self.dual_decay < 1:
            raise ValidationError(f"dual_decay must be in (0, 1), got {self.dual_decay}")
        if not 0 < self.delta_step <= 1:
            raise ValidationError(f"delta_step must be in (0, 1], got {self.delta_step}")
        if self.lbfgs_memory < 1 or self.lbfgs_max_iter < 1:
            raise ValidationError("L-BFGS memory and iteration budget must be >= 1")
        if self.outer_max < 1 or self.outer_tol <= 0:
            raise ValidationError("outer_max must be >= 1 and outer_tol > 0")


@dataclass
class TraceRow:
    """Objective decomposition recorded after one outer iteration."""

    outer_iter: int
    dict_term: float
    ann_term: float
    lagrangian_term: float
    residual: float

    @property
    def total(self):
        return self.dict_term + self.ann_term + self.lagrangian_term


@dataclass
class TrainState:
    """The joint variable set plus the data it is fit to."""

    x: np.ndarray
    theta: NetworkWeights
    cs: list
    constraints: list
    gammas: list
    ys: np.ndarray
    outer_iter: int = 0
    objective_trace: list = field(default_factory=list)
    trace_rows: list = field(default_factory=list)


def _dataset_arrays(dataset):
    gammas = [cm.data for cm in dataset.matrices]
    ys = np.asarray(dataset.scores, dtype=float)
    return gammas, ys


def initialize(dataset, config, rng=None):
    """Spectral warm start from the cohort mean matrix.

    X holds the top-K eigenvectors of the mean matrix scaled by the
    square roots of their (clamped-nonnegative) eigenvalues; each c_n is
    the per-column least-squares fit of Gamma_n onto the rank-one pieces,
    clamped at 0.  V_n starts on the constraint and Lambda_n at zero, so
    the split objective equals the plain objective at this point.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    gammas, ys = _dataset_arrays(dataset)
    p = gammas[0].shape[0]
    k = config.hp.k
    if k > p:
        raise ValidationError(f"k={k} exceeds the matrix dimension p={p}")
    mean_gamma = np.mean(gammas, axis=0)
    vals, vecs = np.linalg.eigh(mean_gamma)
    top = np.argsort(vals)[::-1][:k]
    x = vecs[:, top] * np.sqrt(np.maximum(vals[top], 0.0))

    col_sq = np.einsum("pk,pk->k", x, x)
    cs = []
    for g in gammas:
        quad = np.einsum("pk,pq,qk->k", x, g, x)
        c = np.zeros(k)
        ok = col_sq > 0
        c[ok] = np.maximum(quad[ok] / col_sq[ok] ** 2, 0.0)
        cs.append(c)

    constraints = [ConstraintState(v=x * c, lam=np.zeros((p, k))) for c in cs]
    theta = NetworkWeights.init_random(k, ys.shape[1], rng)
    return TrainState(x=x, theta=theta, cs=cs, constraints=constraints, gammas=gammas, ys=ys)


def _smooth_x_value(x, state):
    """Smooth part of the split objective as a function of X only."""
    total = 0.0
    for g, c, st in zip(state.gammas, state.cs, state.constraints):
        resid = g - st.v @ x.T
        gap = st.v - x * c
        total += float(np.sum(resid * resid) + np.sum(st.lam * gap) + 0.5 * np.sum(gap * gap))
    return total


def _smooth_x_gradient(x, state):
    grad = np.zeros_like(x)
    for g, c, st in zip(state.gammas, state.cs, state.constraints):
        grad += -2.0 * g @ st.v + 2.0 * x @ (st.v.T @ st.v)
        grad += -(st.lam + (st.v - x * c)) * c
    return grad


def prox_step_x(state, config):
    """Shrinkage-thresholded gradient step on X with backtracking.

    The step is accepted only if it does not increase smooth + l1; the
    learning rate is halved up to MAX_BACKTRACK_HALVINGS times, starting
    fresh from config.prox_lr on every call.
    """
    hp = config.hp
    x = state.x
    grad = _smooth_x_gradient(x, state)
    if not np.all(np.isfinite(grad)):
        raise NumericalDivergenceError(
            f"non-finite X gradient at outer iteration {state.outer_iter}",
        )
    current = _smooth_x_value(x, state) + hp.gamma1 * np.sum(np.abs(x))
    eta = config.prox_lr
    for _ in range(MAX_BACKTRACK_HALVINGS + 1):
        cand = soft_threshold(x - eta * grad, eta * hp.gamma1)
        value = _smooth_x_value(cand, state) + hp.gamma1 * np.sum(np.abs(cand))
        if value <= current:
            return cand
        eta /= 2.0
    return x.copy()


def _cn_terms(state, n, config):
    x = state.x
    st = state.constraints[n]
    hp = config.hp
    xtx_diag = np.einsum("pk,pk->k", x, x)
    lv_dot = np.einsum("pk,pk->k", st.lam + st.v, x)
    y = state.ys[n]

    def value(c):
        gap = st.v - x * c
        out = hp.gamma2 * float(np.dot(c, c))
        out += float(np.sum(st.lam * gap)) + 0.5 * float(np.sum(gap * gap))
        if hp.lambda_tradeoff != 0:
            out += network_loss(state.theta, [c], [y], hp.lambda_tradeoff)
        return out

    def gradient(c):
        g = c * xtx_diag - lv_dot + 2.0 * hp.gamma2 * c
        if hp.lambda_tradeoff != 0:
            g = g + hp.lambda_tradeoff * backprop_input(state.theta, c, y)
        return g

    return value, gradient


def _dense_bfgs_matrix(pairs, k):
    """Dense positive-definite Hessian model built from stored pairs."""
    if not pairs:
        return np.eye(k)
    s, yv = pairs[-1]
    b = (float(np.dot(yv, yv)) / float(np.dot(s, yv))) * np.eye(k)
    for s, yv in pairs:
        bs = b @ s
        sbs = float(s @ bs)
        if sbs > 0:
            b = b - np.outer(bs, bs) / sbs + np.outer(yv, yv) / float(np.dot(s, yv))
    return b


def _direction_subproblem(g, b, c):
    """min_p g^T p + 0.5 p^T B p subject to p >= -c, by gradient projection."""
    step = 1.0 / float(np.linalg.eigvalsh(b)[-1])
    p = np.zeros_like(c)
    for _ in range(SUBPROBLEM_MAX_ITERS):
        p_new = np.maximum(p - step * (g + b @ p), -c)
        if np.max(np.abs(p_new - p)) < 1e-12:
            return p_new
        p = p_new
    return p


def update_cn(state, config, n):
    """Bound-constrained quasi-Newton descent on one subject's loadings.

    Iterates direction-from-subproblem then a damped step c + delta p,
    rejecting (and halving delta for) any step that increases the
    objective.  Feasibility c >= 0 holds exactly throughout.
    """
    value, gradient = _cn_terms(state, n, config)
    c = state.cs[n].copy()
    g = gradient(c)
    if not np.all(np.isfinite(g)):
        raise NumericalDivergenceError(
            f"non-finite loading gradient for subject index {n} "
            f"at outer iteration {state.outer_iter}",
        )
    current = value(c)
    pairs = deque(maxlen=config.lbfgs_memory)
    for _ in range(config.lbfgs_max_iter):
        if np.max(np.abs(c - np.maximum(c - g, 0.0)), initial=0.0) < PROJECTED_GRAD_TOL:
            break
        b = _dense_bfgs_matrix(pairs, c.shape[0])
        p = _direction_subproblem(g, b, c)
        if np.max(np.abs(p), initial=0.0) < 1e-14:
            break
        delta = config.delta_step
        accepted = False
        for _ in range(10):
            cand = np.maximum(c + delta * p, 0.0)
            cand_val = value(cand)
            if cand_val <= current:
                accepted = True
                break
            delta /= 2.0
        if not accepted:
            break
        g_new = gradient(cand)
        if not np.all(np.isfinite(g_new)):
            raise NumericalDivergenceError(
                f"non-finite loading gradient for subject index {n} "
                f"at outer iteration {state.outer_iter}",
            )
        s = cand - c
        yv = g_new - g
        if float(np.dot(s, yv)) > CURVATURE_SKIP_FACTOR * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv))
        c, g, current = cand, g_new, cand_val
    return c


def closed_form_v(gamma, x, c, lam):
    """Exact minimizer of the split objective in V for one subject.

    Setting the V-gradient of ||Gamma - V X^T||^2 + Tr[Lam^T (V - X diag c)]
    + 0.5 ||V - X diag c||^2 to zero gives
    V (2 X^T X + I) = 2 Gamma X - Lam + X diag(c).
    """
    k = x.shape[1]
    s = 2.0 * (x.T @ x) + np.eye(k)
    rhs = 2.0 * gamma @ x - lam + x * c
    return np.linalg.solve(s, rhs.T).T


def update_constraints(state, config):
    """Per subject: closed-form V, then decaying-rate dual ascent on Lambda.

    The pair is cycled until the constraint residual stops changing
    (DUAL_RESIDUAL_TOL) or MAX_DUAL_CYCLES is hit; the ascent rate starts
    at config.dual_lr0 on every call and shrinks by config.dual_decay per
    cycle.
    """
    x = state.x
    k = x.shape[1]
    s = 2.0 * (x.T @ x) + np.eye(k)
    cond = np.linalg.cond(s)
    if cond > CONDITION_WARN:
        warnings.warn(f"constraint system condition number {cond:.3e}")
    out = []
    for gamma, c, st in zip(state.gammas, state.cs, state.constraints):
        lam = st.lam.copy()
        xc = x * c
        v = st.v
        eta = config.dual_lr0
        prev_resid = None
        for _ in range(MAX_DUAL_CYCLES):
            rhs = 2.0 * gamma @ x - lam + xc
            v = np.linalg.solve(s, rhs.T).T
            gap = v - xc
            lam = lam + eta * gap
            resid = float(np.linalg.norm(gap))
            if prev_resid is not None and abs(prev_resid - resid) < DUAL_RESIDUAL_TOL:
                break
            prev_resid = resid
            eta *= config.dual_decay
        out.append(ConstraintState(v=v, lam=lam))
    return out


def _constraint_objective(state, hp, constraints):
    return augmented_objective(
        state.x, state.cs, state.gammas, constraints, hp
    ) + network_loss(state.theta, state.cs, state.ys, hp.lambda_tradeoff)


def _damped_dual_step(state, config, proposed, ceiling):
    """Accept the largest dual step fraction that respects the ceiling.

    Multipliers move along the raw proposal, the split variables are
    re-solved for the damped multipliers, and the fraction halves until
    the full objective is at most ceiling.  The zero-fraction fallback
    keeps the multipliers and only refreshes the split variables, which
    cannot increase the objective.
    """
    x = state.x
    s = 2.0 * (x.T @ x) + np.eye(x.shape[1])
    old = state.constraints

    def candidate(tau):
        out = []
        for st_old, st_new, gamma, c in zip(old, proposed, state.gammas, state.cs):
            lam = st_old.lam + tau * (st_new.lam - st_old.lam)
            rhs = 2.0 * gamma @ x - lam + x * c
            out.append(ConstraintState(v=np.linalg.solve(s, rhs.T).T, lam=lam))
        return out

    tau = 1.0
    for _ in range(MAX_DUAL_DAMPINGS):
        cand = candidate(tau)
        if _constraint_objective(state, config.hp, cand) <= ceiling:
            return cand
        tau *= 0.5
    return candidate(0.0)


def _record_trace(state, config):
    hp = config.hp
    x = state.x
    data = reg = lagr = 0.0
    resid_sum = 0.0
    for g, c, st in zip(state.gammas, state.cs, state.constraints):
        r = g - st.v @ x.T
        gap = st.v - x * c
        data += float(np.sum(r * r))
        reg += hp.gamma2 * float(np.dot(c, c))
        lagr += float(np.sum(st.lam * gap)) + 0.5 * float(np.sum(gap * gap))
        resid_sum += float(np.linalg.norm(gap))
    dict_term = data + reg + hp.gamma1 * float(np.sum(np.abs(x)))
    ann_term = network_loss(state.theta, state.cs, state.ys, hp.lambda_tradeoff)
    row = TraceRow(
        outer_iter=state.outer_iter,
        dict_term=dict_term,
        ann_term=ann_term,
        lagrangian_term=lagr,
        residual=resid_sum / len(state.gammas),
    )
    state.trace_rows.append(row)
    state.objective_trace.append(row.total)
    return row


def full_objective(state, hp):
    """Split objective plus network loss, recomputed from scratch."""
    return augmented_objective(
        state.x, state.cs, state.gammas, state.constraints, hp
    ) + network_loss(state.theta, state.cs, state.ys, hp.lambda_tradeoff)


def fit(dataset, config):
    """Run the alternating minimization to convergence.

    Deterministic given config.seed.  Stops when the relative change of
    the full objective drops below config.outer_tol or after
    config.outer_max outer iterations; aborts with the trace attached if
    the objective exceeds ten times its initial value.
    """
    if dataset.n == 0:
        raise ValidationError("cannot fit an empty dataset")
    rng = np.random.default_rng(config.seed)
    state = initialize(dataset, config, rng=rng)
    hp = config.hp
    initial = full_objective(state, hp)
    prev = initial
    for outer in range(1, config.outer_max + 1):
        state.outer_iter = outer
        state.x = prox_step_x(state, config)
        theta_new = train_theta(
            state.theta, state.cs, state.ys, hp.lambda_tradeoff, config.ann, rng
        )
        if network_loss(theta_new, state.cs, state.ys, hp.lambda_tradeoff) <= network_loss(
            state.theta, state.cs, state.ys, hp.lambda_tradeoff
        ):
            state.theta = theta_new
        state.cs = [update_cn(state, config, n) for n in range(dataset.n)]
        banked = max(0.0, prev - full_objective(state, hp))
        proposed = update_constraints(state, config)
        ceiling = prev - (1.0 - DUAL_SPEND) * banked + DUAL_SLACK
        state.constraints = _damped_dual_step(state, config, proposed, ceiling)
        row = _record_trace(state, config)
        obj = row.total
        if not np.isfinite(obj):
            raise NumericalDivergenceError(
                f"objective became non-finite at outer iteration {outer}",
                trace=list(state.objective_trace),
            )
        if obj > 10.0 * abs(initial) and obj > 1e-12:
            raise NumericalDivergenceError(
                f"objective grew from {initial:.6g} to {obj:.6g} "
                f"at outer iteration {outer}",
                trace=list(state.objective_trace),
            )
        if abs(obj - prev) <= config.outer_tol * max(1.0, abs(prev)):
            break
        prev = obj
    return state


def write_train_config(config, path):
    """Persist a TrainConfig as structured text."""
    doc = {
        "hyperparameters": {
            "gamma1": config.hp.gamma1,
            "gamma2": config.hp.gamma2,
            "lambda": config.hp.lambda_tradeoff,
            "k": config.hp.k,
        },
        "training": {
            "prox_lr": config.prox_lr,
            "dual_lr0": config.dual_lr0,
            "dual_decay": config.dual_decay,
            "lbfgs_memory": config.lbfgs_memory,
            "lbfgs_max_iter": config.lbfgs_max_iter,
            "delta_step": config.delta_step,
            "outer_max": config.outer_max,
            "outer_tol": config.outer_tol,
            "seed": config.seed,
        },
        "ann": {
            "epochs": config.ann.epochs,
            "batch_size": config.ann.batch_size,
            "lr0": config.ann.lr0,
            "lr_decay": config.ann.lr_decay,
            "decay_every": config.ann.decay_every,
        },
    }
    write_toml(doc, path)


def read_train_config(path):
    """Load a TrainConfig; absent keys keep their defaults."""
    doc = read_toml(path)
    hp_doc = doc.get("hyperparameters", {})
    hp_kwargs = {}
    for key, attr in (
        ("gamma1", "gamma1"),
        ("gamma2", "gamma2"),
        ("lambda", "lambda_tradeoff"),
        ("k", "k"),
    ):
        if key in hp_doc:
            hp_kwargs[attr] = hp_doc[key]
    ann_doc = doc.get("ann", {})
    ann_kwargs = {
        k: ann_doc[k]
        for k in ("epochs", "batch_size", "lr0", "lr_decay", "decay_every")
        if k in ann_doc
    }
    train_doc = doc.get("training", {})
    train_kwargs = {
        k: train_doc[k]
        for k in (
            "prox_lr",
            "dual_lr0",
            "dual_decay",
            "lbfgs_memory",
            "lbfgs_max_iter",
            "delta_step",
            "outer_max",
            "outer_tol",
            "seed",
        )
        if k in train_doc
    }
    unknown = set(train_doc) - {
        "prox_lr",
        "dual_lr0",
        "dual_decay",
        "lbfgs_memory",
        "lbfgs_max_iter",
        "delta_step",
        "outer_max",
        "outer_tol",
        "seed",
    }
    if unknown:
        raise ValidationError(f"{path}: unknown training keys: {', '.join(sorted(unknown))}")
    return TrainConfig(
        hp=Hyperparameters(**hp_kwargs),
        ann=AnnSchedule(**ann_kwargs),
        **train_kwargs,
    )


def write_trace_csv(trace_rows, path):
    """Objective decomposition per outer iteration as delimited text."""
    with open(path, "w") as fh:
        fh.write("outer_iter,dict_term,ann_term,lagrangian_term,residual\n")
        for row in trace_rows:
            fh.write(
                ",".join(
                    [
                        str(row.outer_iter),
                        format_float(row.dict_term),
                        format_float(row.ann_term),
                        format_float(row.lagrangian_term),
                        format_float(row.residual),
                    ]
                )
                + "\n"
            )
