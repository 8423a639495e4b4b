"""Command-line interface.

Subcommands: synth, train, predict, crossval, eval, gridsearch.  Exit
codes: 0 on success, 2 on validation problems (bad files, bad config,
bad shapes), 3 on numerical divergence during training.  Every report
that writes delimited tables also renders companion PNG figures next to
them.
"""

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .crossval import (
    cross_validate,
    gridsearch,
    read_grid,
    write_grid_csv,
    write_metrics_csv,
    write_scatter_csv,
)
from .data import format_float, load_dataset, read_scores_csv, write_dataset
from .errors import DimensionError, NumericalDivergenceError, ValidationError
from .figures import eval_scatter_figure, scatter_figure, trace_figure
from .inference import predict
from .metrics import mae, mutual_information
from .synth import SynthSpec, generate, read_synth_spec, write_ground_truth
from .trainer import TrainConfig, fit, read_train_config, write_trace_csv


def _load_config(path, seed):
    config = read_train_config(path) if path else TrainConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def cmd_synth(args):
    spec = read_synth_spec(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    dataset, truth = generate(spec)
    manifest = write_dataset(dataset, args.out)
    write_ground_truth(truth, os.path.join(args.out, "truth.json"))
    print(f"wrote {dataset.n} subjects (p={dataset.p}, m={dataset.m}) to {manifest}")


def cmd_train(args):
    dataset = load_dataset(args.data)
    config = _load_config(args.config, args.seed)
    state = fit(dataset, config)
    ckpt = Checkpoint(
        x=state.x,
        theta=state.theta,
        hp=config.hp,
        seed=config.seed,
        score_names=dataset.score_names,
    )
    checkpoint_save(ckpt, args.out)
    if args.trace:
        write_trace_csv(state.trace_rows, args.trace)
        trace_figure(state.trace_rows, os.path.splitext(args.trace)[0] + ".png")
    print(
        f"converged after {state.outer_iter} outer iterations, "
        f"objective {format_float(state.objective_trace[-1])}, "
        f"checkpoint {args.out}"
    )


def write_predictions_csv(path, subject_ids, loadings, preds, score_names):
    k = loadings.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *(f"c_{j + 1}" for j in range(k)), *score_names])
        for sid, c, y in zip(subject_ids, loadings, preds):
            w.writerow([sid, *(format_float(v) for v in c), *(format_float(v) for v in y)])


def read_predictions_csv(path, score_names):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e}") from None
    if not rows or rows[0][:1] != ["subject_id"]:
        raise ValidationError(f"{path}: first header column must be subject_id")
    header = rows[0]
    try:
        cols = [header.index(name) for name in score_names]
    except ValueError as e:
        raise ValidationError(f"{path}: missing score column: {e}") from None
    ids, values = [], []
    for row in rows[1:]:
        ids.append(row[0])
        values.append([float(row[c]) for c in cols])
    return ids, np.array(values, dtype=float).reshape(len(ids), len(score_names))


def cmd_predict(args):
    ckpt = checkpoint_load(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.p != ckpt.x.shape[0]:
        raise DimensionError(
            f"dataset has p={dataset.p} regions but the checkpoint "
            f"was trained with p={ckpt.x.shape[0]}"
        )
    k = ckpt.x.shape[1]
    loadings = np.zeros((dataset.n, k))
    preds = np.zeros((dataset.n, len(ckpt.score_names)))
    for i, cm in enumerate(dataset.matrices):
        loadings[i], preds[i] = predict(ckpt.x, ckpt.theta, cm, ckpt.hp.gamma2)
    write_predictions_csv(args.out, dataset.subject_ids, loadings, preds, ckpt.score_names)
    print(f"wrote predictions for {dataset.n} subjects to {args.out}")


def cmd_crossval(args):
    dataset = load_dataset(args.data)
    config = _load_config(args.config, args.seed)
    reports, scatter = cross_validate(dataset, config, folds=args.folds)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(reports, scatter, dataset.score_names, metrics_path)
    write_scatter_csv(scatter, os.path.join(args.out, "scatter.csv"))
    for name in dataset.score_names:
        scatter_figure(scatter, name, os.path.join(args.out, f"scatter_{name}.png"))
    print(f"wrote {args.folds}-fold metrics and scatter tables to {args.out}")


def cmd_eval(args):
    score_ids, score_names, actual = read_scores_csv(args.scores)
    pred_ids, predicted = read_predictions_csv(args.predictions, score_names)
    row_of = {sid: i for i, sid in enumerate(score_ids)}
    missing = [sid for sid in pred_ids if sid not in row_of]
    if missing:
        raise ValidationError(f"no score rows for predicted subjects: {', '.join(missing)}")
    actual_rows = np.array([actual[row_of[sid]] for sid in pred_ids])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write("score,mae,mi\n")
        for d, name in enumerate(score_names):
            a, p = actual_rows[:, d], predicted[:, d]
            mi = mutual_information(a, p) if len(a) >= 4 else float("nan")
            fh.write(f"{name},{format_float(mae(a, p))},{format_float(mi)}\n")
            eval_scatter_figure(a, p, name, os.path.join(args.out, f"scatter_{name}.png"))
    print(f"wrote evaluation metrics for {len(pred_ids)} subjects to {args.out}")


def cmd_gridsearch(args):
    dataset = load_dataset(args.data)
    base = read_train_config(args.grid)
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    gamma1s, gamma2s, lambdas, folds = read_grid(args.grid)
    rows = gridsearch(dataset, base, gamma1s, gamma2s, lambdas, folds=folds)
    write_grid_csv(rows, args.out)
    best = rows[0]
    print(
        f"wrote {len(rows)} grid cells to {args.out}; best test MAE fraction "
        f"{format_float(best['test_mae_frac'])} at gamma1={best['gamma1']}, "
        f"gamma2={best['gamma2']}, lambda={best['lambda']}"
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="connbasis",
        description="Joint sparse-basis factorization and score prediction "
        "for correlation-matrix cohorts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic cohort")
    p.add_argument("--spec", help="synth spec TOML (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the seed given in --spec")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the joint model on a dataset")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--config", help="training config TOML (defaults if omitted)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trace", help="write the objective trace CSV (and PNG) here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict loadings and scores from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("crossval", help="run the k-fold evaluation protocol")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--config", help="training config TOML (defaults if omitted)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory for tables and figures")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", help="score a predictions file against actual scores")
    p.add_argument("--predictions", required=True, help="predictions CSV path")
    p.add_argument("--scores", required=True, help="actual scores CSV path")
    p.add_argument("--out", required=True, help="output directory for table and figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="sweep regularization weights, rank results")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--grid", required=True, help="grid TOML with [grid] axes")
    p.add_argument("--seed", type=int, help="override the base config seed")
    p.add_argument("--out", required=True, help="ranked table CSV path")
    p.set_defaults(func=cmd_gridsearch)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


def run(argv=None):
    try:
        main(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalDivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(run())
