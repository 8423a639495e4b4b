"""Checkpoint round trips, byte determinism, and corruption diagnostics."""

import json

import numpy as np
import pytest

from connbasis.checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from connbasis.errors import CheckpointError, ValidationError
from connbasis.model import Hyperparameters
from connbasis.network import _FIELDS, NetworkWeights


def make_checkpoint(p=7, k=3, m=2, seed=5):
    rng = np.random.default_rng(seed)
    return Checkpoint(
        x=rng.normal(size=(p, k)),
        theta=NetworkWeights.init_random(k, m, rng),
        hp=Hyperparameters(gamma1=2.5, gamma2=0.3, lambda_tradeoff=0.7, k=k),
        seed=seed,
        score_names=["alpha", "beta"],
    )


class TestRoundTrip:
    def test_all_fields_survive_bitwise(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "model.json"
        checkpoint_save(ckpt, path)
        back = checkpoint_load(path)
        assert np.array_equal(back.x, ckpt.x)
        for name in _FIELDS:
            assert np.array_equal(getattr(back.theta, name), getattr(ckpt.theta, name))
        assert back.hp == ckpt.hp
        assert back.seed == ckpt.seed
        assert back.score_names == ckpt.score_names

    def test_save_is_byte_deterministic(self, tmp_path):
        ckpt = make_checkpoint()
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        checkpoint_save(ckpt, a)
        checkpoint_save(ckpt, b)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes().endswith(b"\n")

    def test_payload_is_plain_json(self, tmp_path):
        path = tmp_path / "model.json"
        checkpoint_save(make_checkpoint(), path)
        payload = json.loads(path.read_text())
        assert payload["version"] == 1
        assert payload["p"] == 7 and payload["k"] == 3 and payload["m"] == 2
        assert set(payload["hyperparameters"]) == {"gamma1", "gamma2", "lambda", "k"}


class TestDiagnostics:
    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            checkpoint_load(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{ not json")
        with pytest.raises(CheckpointError, match="corrupted"):
            checkpoint_load(path)

    def test_missing_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(CheckpointError, match="no version field"):
            checkpoint_load(path)

    def test_future_version(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "model.json"
        checkpoint_save(ckpt, path)
        payload = json.loads(path.read_text())
        payload["version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError, match="version 99"):
            checkpoint_load(path)

    def test_shape_mismatch(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "model.json"
        checkpoint_save(ckpt, path)
        payload = json.loads(path.read_text())
        payload["x"] = [[1.0, 2.0], [3.0, 4.0]]
        path.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            checkpoint_load(path)

    def test_score_name_count_mismatch(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "model.json"
        checkpoint_save(ckpt, path)
        payload = json.loads(path.read_text())
        payload["score_names"] = ["only_one"]
        path.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError, match="score names"):
            checkpoint_load(path)

    def test_checkpoint_error_is_validation_error(self):
        assert issubclass(CheckpointError, ValidationError)
