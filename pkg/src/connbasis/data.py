"""Dataset layout and on-disk formats.

A dataset on disk is a manifest (structured text), one matrix CSV per
subject, and a scores CSV with one named column per clinical measure.
All delimited files use exact decimal representations so that a
write-then-read round trip reproduces every float bit for bit.
"""

import csv
import json
import math
import os
import re
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import DimensionError, ValidationError
from .model import CorrelationMatrix, eigen_residualize

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")


def format_float(v):
    """Shortest decimal string that parses back to the same float."""
    return repr(float(v))


def canonical_json(obj):
    """Deterministic JSON encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        out = repr(x)
        if "." not in out and "e" not in out and "E" not in out:
            out += ".0"
        return out
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(i) for i in v) + "]"
    raise ValidationError(f"cannot serialize {type(v).__name__} values to TOML")


def _toml_key(k):
    return k if _BARE_KEY.match(k) else json.dumps(k)


def _is_table_array(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(isinstance(i, dict) for i in v)


def write_toml(doc, path):
    """Emit a nested mapping as TOML, keys in insertion order."""
    lines = []

    def emit(table, prefix):
        for k, v in table.items():
            if not isinstance(v, dict) and not _is_table_array(v):
                lines.append(f"{_toml_key(k)} = {_toml_scalar(v)}")
        for k, v in table.items():
            name = ".".join(_toml_key(p) for p in prefix + [k])
            if isinstance(v, dict):
                lines.extend(["", f"[{name}]"])
                emit(v, prefix + [k])
            elif _is_table_array(v):
                for item in v:
                    lines.extend(["", f"[[{name}]]"])
                    emit(item, prefix + [k])

    emit(doc, [])
    text = "\n".join(lines).lstrip("\n") + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def read_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"{path} does not parse as TOML: {e}") from None


def write_matrix_csv(arr, path):
    np.savetxt(path, np.asarray(arr, dtype=float), delimiter=",", fmt="%.17g")


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_scores_csv(path, subject_ids, score_names, scores):
    scores = np.asarray(scores, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *score_names])
        for sid, row in zip(subject_ids, scores):
            w.writerow([sid, *(format_float(v) for v in row)])


def read_scores_csv(path):
    """Returns (subject_ids, score_names, scores array)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e}") from None
    if not rows or rows[0][:1] != ["subject_id"]:
        raise ValidationError(f"{path}: first header column must be subject_id")
    names = rows[0][1:]
    ids, values = [], []
    for row in rows[1:]:
        if len(row) != len(names) + 1:
            raise ValidationError(f"{path}: row for {row[0] if row else '?'} has wrong width")
        ids.append(row[0])
        values.append([float(v) for v in row[1:]])
    return ids, names, np.array(values, dtype=float).reshape(len(ids), len(names))


@dataclass
class Dataset:
    """Validated in-memory cohort: matrices plus aligned score rows."""

    subject_ids: list
    matrices: list
    scores: np.ndarray
    score_names: list
    score_ranges: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        n = len(self.subject_ids)
        if n == 0:
            raise ValidationError("dataset has no subjects")
        if len(set(self.subject_ids)) != n:
            dupes = sorted({s for s in self.subject_ids if self.subject_ids.count(s) > 1})
            raise ValidationError(f"duplicate subject ids: {', '.join(dupes)}")
        if len(self.matrices) != n:
            raise DimensionError(f"{n} subject ids but {len(self.matrices)} matrices")
        p = self.matrices[0].data.shape[0]
        for cm in self.matrices:
            if cm.data.shape[0] != p:
                raise DimensionError(
                    f"subject {cm.subject_id}: matrix is {cm.data.shape[0]}x"
                    f"{cm.data.shape[0]}, expected {p}x{p}"
                )
        if self.scores.shape != (n, len(self.score_names)):
            raise DimensionError(
                f"score table shape {self.scores.shape} does not match "
                f"{n} subjects x {len(self.score_names)} measures"
            )
        if len(self.score_ranges) != len(self.score_names):
            raise DimensionError("one declared range per score measure required")
        for name, (lo, hi) in zip(self.score_names, self.score_ranges):
            if not lo < hi:
                raise ValidationError(f"score {name}: range [{lo}, {hi}] is empty")

    @property
    def n(self):
        return len(self.subject_ids)

    @property
    def p(self):
        return self.matrices[0].data.shape[0]

    @property
    def m(self):
        return len(self.score_names)

    def subset(self, indices):
        """New dataset restricted to the given subject indices, in order."""
        indices = list(indices)
        return Dataset(
            subject_ids=[self.subject_ids[i] for i in indices],
            matrices=[self.matrices[i] for i in indices],
            scores=self.scores[indices],
            score_names=list(self.score_names),
            score_ranges=list(self.score_ranges),
        )


def write_dataset(dataset, out_dir):
    """Write manifest + matrices + scores under out_dir; returns manifest path."""
    os.makedirs(os.path.join(out_dir, "matrices"), exist_ok=True)
    for sid, cm in zip(dataset.subject_ids, dataset.matrices):
        write_matrix_csv(cm.data, os.path.join(out_dir, "matrices", f"{sid}.csv"))
    write_scores_csv(
        os.path.join(out_dir, "scores.csv"),
        dataset.subject_ids,
        dataset.score_names,
        dataset.scores,
    )
    doc = {
        "dataset": {
            "p": dataset.p,
            "m": dataset.m,
            "raw": False,
            "scores": "scores.csv",
        },
        "score": [
            {"name": name, "min": float(lo), "max": float(hi)}
            for name, (lo, hi) in zip(dataset.score_names, dataset.score_ranges)
        ],
        "subject": [
            {"id": sid, "matrix": f"matrices/{sid}.csv"} for sid in dataset.subject_ids
        ],
    }
    manifest = os.path.join(out_dir, "manifest.toml")
    write_toml(doc, manifest)
    return manifest


def load_dataset(manifest_path):
    """Read and validate a dataset; residualizes matrices when flagged raw."""
    doc = read_toml(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        meta = doc["dataset"]
        p, m = int(meta["p"]), int(meta["m"])
        raw = bool(meta.get("raw", False))
        scores_file = meta["scores"]
        score_decls = doc["score"]
        subjects = doc["subject"]
    except KeyError as e:
        raise ValidationError(f"{manifest_path}: missing manifest key {e}") from None
    if len(score_decls) != m:
        raise ValidationError(
            f"{manifest_path}: {len(score_decls)} score declarations but m={m}"
        )
    names = [s["name"] for s in score_decls]
    ranges = [(float(s["min"]), float(s["max"])) for s in score_decls]

    csv_ids, csv_names, csv_scores = read_scores_csv(os.path.join(base, scores_file))
    if csv_names != names:
        raise ValidationError(
            f"score table columns {csv_names} do not match manifest {names}"
        )
    row_of = {}
    for i, sid in enumerate(csv_ids):
        if sid in row_of:
            raise ValidationError(f"score table has two rows for subject {sid}")
        row_of[sid] = i

    ids, matrices, score_rows = [], [], []
    for entry in subjects:
        sid = entry["id"]
        mpath = os.path.join(base, entry["matrix"])
        try:
            arr = read_matrix_csv(mpath)
        except OSError:
            raise ValidationError(f"subject {sid}: matrix file not found: {mpath}") from None
        if arr.shape != (p, p):
            raise DimensionError(
                f"subject {sid}: matrix has shape {arr.shape}, manifest declares p={p}"
            )
        cm = CorrelationMatrix.from_raw(arr, sid)
        if raw:
            cm = eigen_residualize(cm)
        if sid not in row_of:
            raise ValidationError(f"subject {sid}: no row in score table")
        ids.append(sid)
        matrices.append(cm)
        score_rows.append(csv_scores[row_of[sid]])
    unknown = sorted(set(csv_ids) - set(ids))
    if unknown:
        raise ValidationError(
            f"score table has rows for unknown subjects: {', '.join(unknown)}"
        )
    return Dataset(
        subject_ids=ids,
        matrices=matrices,
        scores=np.array(score_rows, dtype=float),
        score_names=names,
        score_ranges=ranges,
    )
