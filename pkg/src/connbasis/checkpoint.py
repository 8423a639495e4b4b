"""Versioned model checkpoints.

A checkpoint freezes everything prediction needs: the basis, the
network weights, the hyperparameters, the training seed, and the score
column names.  Serialization is canonical JSON (sorted keys, exact float
representations), so saving the same model twice yields identical bytes.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import canonical_json
from .errors import CheckpointError
from .model import Hyperparameters
from .network import _FIELDS, NetworkWeights

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Frozen model state for out-of-sample prediction."""

    x: np.ndarray
    theta: NetworkWeights
    hp: Hyperparameters
    seed: int
    score_names: list


def checkpoint_save(ckpt, path):
    """Write a checkpoint; byte-deterministic for equal contents."""
    payload = {
        "version": FORMAT_VERSION,
        "p": int(ckpt.x.shape[0]),
        "k": int(ckpt.x.shape[1]),
        "m": int(ckpt.theta.m),
        "hidden": int(ckpt.theta.b1.shape[0]),
        "seed": int(ckpt.seed),
        "score_names": list(ckpt.score_names),
        "hyperparameters": {
            "gamma1": ckpt.hp.gamma1,
            "gamma2": ckpt.hp.gamma2,
            "lambda": ckpt.hp.lambda_tradeoff,
            "k": ckpt.hp.k,
        },
        "x": np.asarray(ckpt.x, dtype=float).tolist(),
        "theta": {f: np.asarray(getattr(ckpt.theta, f), dtype=float).tolist() for f in _FIELDS},
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(payload) + "\n")


def checkpoint_load(path):
    """Read and validate a checkpoint; errors name what went wrong."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is corrupted: {e}") from None
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"checkpoint {path} is corrupted: no version field")
    if payload["version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {payload['version']}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    try:
        p, k, m, hidden = (int(payload[key]) for key in ("p", "k", "m", "hidden"))
        hp_doc = payload["hyperparameters"]
        hp = Hyperparameters(
            gamma1=float(hp_doc["gamma1"]),
            gamma2=float(hp_doc["gamma2"]),
            lambda_tradeoff=float(hp_doc["lambda"]),
            k=int(hp_doc["k"]),
        )
        x = np.asarray(payload["x"], dtype=float)
        theta = NetworkWeights(
            **{f: np.asarray(payload["theta"][f], dtype=float) for f in _FIELDS}
        )
        seed = int(payload["seed"])
        score_names = [str(s) for s in payload["score_names"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} is corrupted: {e}") from None
    shapes = {
        "x": (x.shape, (p, k)),
        "w1": (theta.w1.shape, (hidden, k)),
        "b1": (theta.b1.shape, (hidden,)),
        "w2": (theta.w2.shape, (hidden, hidden)),
        "b2": (theta.b2.shape, (hidden,)),
        "w3": (theta.w3.shape, (m, hidden)),
        "b3": (theta.b3.shape, (m,)),
    }
    for name, (got, want) in shapes.items():
        if got != want:
            raise CheckpointError(
                f"checkpoint {path} is corrupted: {name} has shape {got}, expected {want}"
            )
    if len(score_names) != m:
        raise CheckpointError(
            f"checkpoint {path} is corrupted: {len(score_names)} score names for m={m}"
        )
    return Checkpoint(x=x, theta=theta, hp=hp, seed=seed, score_names=score_names)
