"""Command-line entry point: ``kandos {train,evaluate,predict,profile,correlate,synth}``.

Exit codes: 0 success, 1 validation failure (bad data/config, ``--assert-*``
not met), 2 environment or I/O error. Failures print one line
``<CODE>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from kandos import data as D
from kandos import evaluation as E
from kandos.errors import DataError, KandosError, ModelFileError, SchemaError
from kandos.model import KanConfig, init_model, load_model, predict_proba, save_model
from kandos.profiling import DEFAULT_BATCH_SIZES, bench_inference, param_report
from kandos.training import TrainConfig, fit

log = logging.getLogger("kandos")

REFERENCE_DEFAULTS = {
    "hidden": "32,16",
    "grid_intervals": 5,
    "degree": 3,
    "lr": 0.001,
    "batch_size": 100,
    "epochs": 200,
    "test_fraction": 0.2,
    "per_class_cap": D.REFERENCE_PER_CLASS_CAP,
}


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.status = status


def _ints(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cap(text: str):
    return None if str(text).lower() in ("none", "0", "") else int(text)


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("E_IO", f"{what} not found: {p}", 2)
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError("E_IO", f"cannot create output directory {p}: {e}", 2)
    return p


def _config_echo(args) -> dict:
    skip = {"func", "config", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --- dataset assembly ------------------------------------------------------


def _load_labelled(paths, label_column) -> D.FlowDataset:
    parts = [D.load_csv(_need_file(p, "input CSV"), label_column) for p in paths]
    first = parts[0]
    for p, ds in zip(paths[1:], parts[1:]):
        if ds.feature_names != first.feature_names:
            raise SchemaError(f"{p}: columns differ from {paths[0]}")
    if len(parts) == 1:
        return first
    return D.FlowDataset(
        np.vstack([d.features for d in parts]),
        None,
        list(first.feature_names),
        "csv",
        np.concatenate([d.label_names for d in parts]),
    )


def _synth_config(args, samples_per_class=None) -> D.SynthConfig:
    spc = samples_per_class if samples_per_class is not None else args.samples // 2
    cfg = D.SynthConfig(spc, args.features, args.separation, args.noise_fraction, args.synth_seed)
    cfg.validate()
    return cfg


def _dataset(args) -> D.FlowDataset:
    if args.synthetic:
        return D.synth_generate(_synth_config(args))
    if not args.csv:
        raise CliError("E_CONFIG", "give --csv PATH (repeatable) or --synthetic", 1)
    return D.map_labels(_load_labelled(args.csv, args.label_column))


# --- commands --------------------------------------------------------------


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    ds = _dataset(args)
    balanced = D.balance(ds, args.per_class_cap, seed=args.balance_seed)
    train_raw, test_raw = D.split(balanced, args.test_fraction, seed=args.split_seed)
    stats = D.clean_fit(train_raw)
    train, test = D.clean_apply(train_raw, stats), D.clean_apply(test_raw, stats)
    log.info("data: %d balanced rows, train %d, test %d, %d features", len(balanced), len(train), len(test), train.n_features)

    kcfg = KanConfig(
        layer_dims=(train.n_features, *args.hidden, 1),
        grid_intervals=args.grid_intervals,
        degree=args.degree,
        grid_range=(-3.0, 3.0),
        seed=args.seed,
    )
    tcfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        shuffle_seed=args.shuffle_seed,
        eval_every=args.eval_every,
        patience=args.patience,
    )
    tcfg.validate()
    model = init_model(kcfg)
    model, history = fit(model, train, test, tcfg)
    model.clean_stats = stats
    model.decision_threshold = args.threshold

    save_model(model, out / "model.json")
    _write(out / "history.tsv", history.to_tsv())
    _dump_json(out / "clean_stats.json", stats.to_dict())
    if args.save_split:
        D.write_csv(test_raw, out / "test_split.csv", args.label_column)

    report = E.evaluate_scores(test.labels, predict_proba(model, test.features), args.threshold, args.sweep_step)
    pr = param_report(model)
    summary = {
        "command": "train",
        "config": _config_echo(args),
        "model_config": kcfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "data": {
            "provenance": ds.provenance,
            "rows_loaded": len(ds),
            "class_counts_loaded": ds.class_counts(),
            "rows_balanced": len(balanced),
            "train_rows": len(train),
            "test_rows": len(test),
            "features": train.n_features,
        },
        "epochs_run": len(history),
        "test_evaluation": report.to_dict(),
        "parameters": pr.to_dict(),
    }
    _dump_json(out / "summary.json", summary)

    m = report.metrics
    print(f"trained {len(history)} epochs -> {out / 'model.json'}")
    print(f"test accuracy {m.accuracy:.4f}  precision {m.precision:.4f}  recall {m.recall:.4f}  f1 {m.f1:.4f}  "
          f"auc {report.auc:.4f}  ap {report.ap:.4f}")
    for line in pr.lines():
        print(line)
    return _check_asserts(args, m.accuracy, report.auc)


def _check_asserts(args, accuracy, auc) -> int:
    failed = []
    if getattr(args, "assert_accuracy", None) is not None and accuracy < args.assert_accuracy:
        failed.append(f"accuracy {accuracy:.4f} < {args.assert_accuracy}")
    if getattr(args, "assert_auc", None) is not None and auc < args.assert_auc:
        failed.append(f"auc {auc:.4f} < {args.assert_auc}")
    if failed:
        print("E_ASSERT: " + "; ".join(failed), file=sys.stderr)
        return 1
    return 0


def _model_inputs(model, ds: D.FlowDataset) -> np.ndarray:
    if model.clean_stats is not None:
        return D.clean_apply(ds, model.clean_stats).features
    if ds.n_features != model.in_dim:
        raise SchemaError(f"model expects {model.in_dim} features, dataset has {ds.n_features}")
    if np.isnan(ds.features).any():
        raise DataError("dataset has missing values and the model carries no cleaning statistics")
    return ds.features


def cmd_evaluate(args) -> int:
    model = load_model(_need_file(args.model, "model file"))
    ds = D.map_labels(_load_labelled(args.csv, args.label_column))
    out = _out_dir(args.out)
    threshold = model.decision_threshold if args.threshold is None else args.threshold
    scores = predict_proba(model, _model_inputs(model, ds))
    report = E.evaluate_scores(ds.labels, scores, threshold, args.sweep_step)
    report.context = {"command": "evaluate", "config": _config_echo(args), "rows": len(ds)}
    if args.correlation:
        imputed = D.FlowDataset(D.impute(ds, model.clean_stats) if model.clean_stats else ds.features,
                                ds.labels, ds.feature_names)
        report.correlation = E.feature_correlation(imputed)

    roc, _ = E.roc_auc(ds.labels, scores)
    pr, _ = E.pr_ap(ds.labels, scores)
    _write(out / "roc.tsv", roc.to_tsv())
    _write(out / "pr.tsv", pr.to_tsv())
    _write(out / "sweep.tsv", report.sweep.to_tsv())
    _dump_json(out / "eval_report.json", report.to_dict())

    cm, m, pct = report.confusion, report.metrics, report.confusion.percentages()
    print(f"threshold {threshold:g} on {cm.total} rows")
    print(f"              pred normal        pred attack")
    print(f"true normal   {cm.tn:>8} ({pct['tn']:6.1%})  {cm.fp:>8} ({pct['fp']:6.1%})")
    print(f"true attack   {cm.fn:>8} ({pct['fn']:6.1%})  {cm.tp:>8} ({pct['tp']:6.1%})")
    print(f"accuracy {m.accuracy:.4f}  precision {m.precision:.4f}  recall {m.recall:.4f}  f1 {m.f1:.4f}  "
          f"fpr {m.fpr:.4f}  fnr {m.fnr:.4f}")
    print(f"auc {report.auc:.4f}  ap {report.ap:.4f}  best threshold {report.sweep.best_threshold:g} "
          f"(f1 {report.sweep.best_f1:.4f})")
    return _check_asserts(args, m.accuracy, report.auc)


def cmd_predict(args) -> int:
    model = load_model(_need_file(args.model, "model file"))
    ds = D.load_csv(_need_file(args.csv, "input CSV"), args.label_column, require_label=False)
    threshold = model.decision_threshold if args.threshold is None else args.threshold
    scores = predict_proba(model, _model_inputs(model, ds))
    out = Path(args.out)
    lines = ["row\tscore\tdecision"]
    lines += [f"{i}\t{s!r}\t{int(s >= threshold)}" for i, s in enumerate(scores.tolist())]
    try:
        _write(out, "\n".join(lines) + "\n")
    except OSError as e:
        raise CliError("E_IO", f"cannot write {out}: {e}", 2)
    print(f"scored {len(scores)} rows at threshold {threshold:g}: {int(np.sum(scores >= threshold))} flagged -> {out}")
    return 0


def cmd_profile(args) -> int:
    model = load_model(_need_file(args.model, "model file"))
    out = _out_dir(args.out)
    pr = param_report(model)
    reports = bench_inference(model, args.batch_sizes, args.repetitions, args.seed, threads=args.threads)
    lines = ["\t".join(reports[0].COLUMNS)] + ["\t".join(str(c) for c in r.row()) for r in reports]
    _write(out / "resource_report.tsv", "\n".join(lines) + "\n")
    _dump_json(out / "resource_report.json", {
        "config": _config_echo(args),
        "parameters": pr.to_dict(),
        "benchmarks": [r.to_dict() for r in reports],
    })
    for line in pr.lines():
        print(line)
    print(f"{'batch':>6} {'ms/sample':>11} {'samples/s':>11}   (reference 2.00 ms/sample, 500 samples/s)")
    for r in reports:
        print(f"{r.batch_size_used:>6} {r.per_sample_latency_ms:>11.4f} {r.throughput_samples_per_s:>11.1f}")
    if args.assert_amortization:
        by_size = {r.batch_size_used: r.per_sample_latency_ms for r in reports}
        lo, hi = min(by_size), max(by_size)
        if by_size[hi] > by_size[lo]:
            print(f"E_ASSERT: per-sample latency at batch {hi} exceeds batch {lo}", file=sys.stderr)
            return 1
    return 0


def cmd_correlate(args) -> int:
    out = _out_dir(args.out)
    ds = D.balance(_dataset(args), args.per_class_cap, seed=args.balance_seed)
    stats = D.clean_fit(ds)
    table = E.feature_correlation(D.FlowDataset(D.impute(ds, stats), ds.labels, ds.feature_names))
    _write(out / "correlation.tsv", table.to_tsv())
    bands = table.bands()
    _dump_json(out / "correlation_bands.json", {"config": _config_echo(args), "bands": bands,
                                                 "thresholds": {"strong": E.STRONG_R, "moderate": E.MODERATE_R}})
    for i, row in enumerate(table.rows[: args.top], start=1):
        print(f"{i:>3}  {row.feature:<32} {row.r:+.3f}")
    print(f"strong (|r|>{E.STRONG_R}): {bands['strong']}  moderate: {bands['moderate']}  "
          f"weak (|r|<={E.MODERATE_R}): {bands['weak']}  constant: {bands['constant']}")
    return 0


def cmd_synth(args) -> int:
    cfg = _synth_config(args, samples_per_class=args.samples_per_class)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        _out_dir(out.parent)
    D.write_csv(D.synth_generate(cfg), out, args.label_column)
    print(f"wrote {2 * cfg.samples_per_class} rows x {cfg.feature_count} features "
          f"(Bayes accuracy {D.synth_bayes_accuracy(cfg):.4f}) -> {out}")
    return 0


# --- argument parsing ------------------------------------------------------


def _add_synth_args(p, with_samples=True):
    if with_samples:
        p.add_argument("--samples", type=int, default=2000, help="total synthetic rows (split evenly by class)")
    p.add_argument("--features", type=int, default=78)
    p.add_argument("--separation", type=float, default=6.0, help="distance between class means in std units")
    p.add_argument("--noise-fraction", type=float, default=0.2)
    p.add_argument("--synth-seed", type=int, default=0)


def _add_data_args(p):
    p.add_argument("--csv", action="append", help="flow CSV (repeatable)")
    p.add_argument("--label-column", default="Label")
    p.add_argument("--synthetic", action="store_true", help="use the synthetic generator instead of CSV input")
    _add_synth_args(p)
    p.add_argument("--per-class-cap", type=_cap, default=D.REFERENCE_PER_CLASS_CAP, help="'none' for no cap")
    p.add_argument("--balance-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kandos", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write model/history/summary")
    p.add_argument("--config", help="key = value file; command-line flags win")
    _add_data_args(p)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--hidden", type=_ints, default=[32, 16], help="hidden layer sizes, e.g. 32,16")
    p.add_argument("--grid-intervals", type=int, default=5)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="model initialisation seed")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--patience", type=int, default=None, help="stop after N evaluations without test-loss gain")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold stored in the model")
    p.add_argument("--sweep-step", type=float, default=0.001)
    p.add_argument("--no-save-split", dest="save_split", action="store_false", help="skip writing test_split.csv")
    p.add_argument("--reference-defaults", "--paper-defaults", dest="reference_defaults", action="store_true",
                   help="pin every hyperparameter to the reference setup")
    p.add_argument("--assert-accuracy", type=float)
    p.add_argument("--assert-auc", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a labelled CSV and write metrics and curves")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--csv", action="append", required=True)
    p.add_argument("--label-column", default="Label")
    p.add_argument("--threshold", type=float, default=None, help="default: the model's stored threshold")
    p.add_argument("--sweep-step", type=float, default=0.001)
    p.add_argument("--correlation", action="store_true", help="append the feature correlation table")
    p.add_argument("--assert-accuracy", type=float)
    p.add_argument("--assert-auc", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write per-row scores and decisions")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--label-column", default="Label", help="dropped from the features when present")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True, help="output TSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("profile", help="parameter/size report and inference benchmark")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--batch-sizes", type=_ints, default=list(DEFAULT_BATCH_SIZES))
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--assert-amortization", action="store_true",
                   help="exit 1 unless the largest batch has the lowest-or-equal per-sample latency of the extremes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("correlate", help="rank features by correlation with the label")
    p.add_argument("--config")
    _add_data_args(p)
    p.add_argument("--top", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("synth", help="write a synthetic flow CSV")
    p.add_argument("--config")
    p.add_argument("--samples-per-class", type=int, default=1000)
    _add_synth_args(p, with_samples=False)
    p.add_argument("--label-column", default="Label")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("E_CONFIG", f"{path}:{n}: expected 'key = value'", 1)
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config_file(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = read_config_file(_need_file(args.config, "config file"))
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "func"):
            raise CliError("E_CONFIG", f"{args.config}: unknown key {key!r} for {args.command}", 1)
        if action.const is not None and action.nargs == 0:  # store_true / store_false
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(raw)
        else:
            defaults[key] = raw
        if isinstance(action, argparse._AppendAction) and not isinstance(defaults[key], list):
            defaults[key] = [defaults[key]]
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "reference_defaults", False):
            for key, value in REFERENCE_DEFAULTS.items():
                setattr(args, key, _ints(value) if key == "hidden" else value)
        return args.func(args)
    except CliError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return e.status
    except ModelFileError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return 2
    except KandosError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"E_IO: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
