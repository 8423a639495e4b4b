"""Two-hidden-layer regression network mapping loadings to score vectors.

Architecture: tanh on the first hidden layer, softplus on the second,
affine readout.  Both hidden layers have width 40.  The output layer is
left affine because the score targets span ranges far outside any
squashing nonlinearity.

Backpropagation is written out by hand because the surrounding
optimization also needs the exact gradient with respect to the *input*
loading vector, not just the weights.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ValidationError

HIDDEN_WIDTH = 40

_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class NetworkWeights:
    """All parameters: w1 (H,K), b1 (H,), w2 (H,H), b2 (H,), w3 (M,H), b3 (M,)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def init_random(cls, k, m, rng, hidden=HIDDEN_WIDTH):
        """Glorot-uniform weights, zero biases, all draws from rng."""

        def glorot(rows, cols):
            bound = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-bound, bound, size=(rows, cols))

        return cls(
            w1=glorot(hidden, k),
            b1=np.zeros(hidden),
            w2=glorot(hidden, hidden),
            b2=np.zeros(hidden),
            w3=glorot(m, hidden),
            b3=np.zeros(m),
        )

    @classmethod
    def zeros_like(cls, other):
        return cls(*(np.zeros_like(getattr(other, f)) for f in _FIELDS))

    def copy(self):
        return NetworkWeights(*(getattr(self, f).copy() for f in _FIELDS))

    @property
    def k(self):
        return self.w1.shape[1]

    @property
    def m(self):
        return self.w3.shape[0]


def softplus(x):
    """log(1 + exp(x)) computed without overflow."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def _layers(theta, c):
    z1 = theta.w1 @ c + theta.b1
    a1 = np.tanh(z1)
    z2 = theta.w2 @ a1 + theta.b2
    a2 = softplus(z2)
    yhat = theta.w3 @ a2 + theta.b3
    return a1, z2, a2, yhat


def forward(theta, c):
    """Predicted score vector for one loading vector c (K,)."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] != theta.k:
        raise DimensionError(f"loadings {c.shape} incompatible with input width {theta.k}")
    return _layers(theta, c)[3]


def forward_many(theta, cs):
    """Row-wise forward pass: cs (N,K) -> predictions (N,M)."""
    cs = np.asarray(cs, dtype=float)
    a1 = np.tanh(cs @ theta.w1.T + theta.b1)
    a2 = softplus(a1 @ theta.w2.T + theta.b2)
    return a2 @ theta.w3.T + theta.b3


def network_loss(theta, cs, ys, lambda_tradeoff):
    """lambda * sum_n ||forward(theta, c_n) - y_n||^2."""
    if len(cs) != len(ys):
        raise DimensionError(f"{len(cs)} loading vectors but {len(ys)} score vectors")
    total = 0.0
    for c, y in zip(cs, ys):
        r = forward(theta, c) - np.asarray(y, dtype=float)
        total += float(np.dot(r, r))
    return lambda_tradeoff * total


def backprop_weights(theta, c, y):
    """Exact gradient of ||forward(theta, c) - y||^2 w.r.t. every weight.

    Returned as a NetworkWeights holding the per-field gradients.  Callers
    scale by the loss weight themselves.
    """
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    a1, z2, a2, yhat = _layers(theta, c)
    r = 2.0 * (yhat - y)
    d2 = (theta.w3.T @ r) * expit(z2)
    d1 = (theta.w2.T @ d2) * (1.0 - a1 * a1)
    return NetworkWeights(
        w1=np.outer(d1, c),
        b1=d1,
        w2=np.outer(d2, a1),
        b2=d2,
        w3=np.outer(r, a2),
        b3=r,
    )


def backprop_input(theta, c, y):
    """Exact gradient of ||forward(theta, c) - y||^2 w.r.t. the loadings c."""
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    a1, z2, _, yhat = _layers(theta, c)
    r = 2.0 * (yhat - y)
    d2 = (theta.w3.T @ r) * expit(z2)
    d1 = (theta.w2.T @ d2) * (1.0 - a1 * a1)
    return theta.w1.T @ d1


@dataclass
class AdamState:
    """Moment accumulators and step counter for ADAM."""

    m: NetworkWeights
    v: NetworkWeights
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, theta, lr):
        if lr <= 0:
            raise ValidationError(f"learning rate must be > 0, got {lr}")
        return cls(m=NetworkWeights.zeros_like(theta), v=NetworkWeights.zeros_like(theta), t=0, lr=lr)


def adam_step(state, theta, grad):
    """One bias-corrected ADAM update; returns (new state, new weights)."""
    t = state.t + 1
    new_m, new_v, new_theta = {}, {}, {}
    for f in _FIELDS:
        g = getattr(grad, f)
        m = state.beta1 * getattr(state.m, f) + (1.0 - state.beta1) * g
        v = state.beta2 * getattr(state.v, f) + (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        new_m[f] = m
        new_v[f] = v
        new_theta[f] = getattr(theta, f) - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    next_state = replace(state, m=NetworkWeights(**new_m), v=NetworkWeights(**new_v), t=t)
    return next_state, NetworkWeights(**new_theta)


@dataclass(frozen=True)
class AnnSchedule:
    """Epoch budget and learning-rate decay for the weight update."""

    epochs: int = 50
    batch_size: int = 12
    lr0: float = 1e-4
    lr_decay: float = 0.9
    decay_every: int = 5

    def lr_at(self, epoch):
        return self.lr0 * self.lr_decay ** (epoch // self.decay_every)


def train_theta(theta, cs, ys, lambda_tradeoff, schedule, rng):
    """Mini-batch ADAM on the summed score loss.

    Subjects are reshuffled every epoch with rng; a short final batch is
    kept rather than dropped.  The learning rate follows schedule.lr_at.
    Batch gradients sum per-subject gradients in shuffle order, scaled by
    lambda_tradeoff.
    """
    n = len(cs)
    if n == 0:
        raise ValidationError("cannot train the score network on an empty dataset")
    if len(ys) != n:
        raise DimensionError(f"{n} loading vectors but {len(ys)} score vectors")
    theta = theta.copy()
    state = AdamState.fresh(theta, schedule.lr0)
    for epoch in range(schedule.epochs):
        state = replace(state, lr=schedule.lr_at(epoch))
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            batch = order[start:start + schedule.batch_size]
            grad = NetworkWeights.zeros_like(theta)
            for idx in batch:
                g = backprop_weights(theta, cs[idx], ys[idx])
                for f in _FIELDS:
                    getattr(grad, f)[...] += getattr(g, f)
            for f in _FIELDS:
                getattr(grad, f)[...] *= lambda_tradeoff
            state, theta = adam_step(state, theta, grad)
    return theta
