"""Command-line pipeline orchestration.

Each subcommand drives exactly one pipeline stage and writes its artifact to
a file, so any step can be re-run from the previous step's output alone.
Exit codes: 0 success, 1 usage, 2 missing or unreadable/unwritable files,
3 domain errors (invalid values, malformed content).

Heavy imports happen inside the handlers: the ``--threads`` cap must land in
the environment before the numeric libraries initialize their thread pools.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger(__name__)

_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse defaults to 2, which we reserve for I/O)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dump accepts them."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_echo(args) -> dict:
    # threads is an execution knob, not a pipeline parameter: artifacts must
    # not depend on it, so it stays out of the echo
    skip = {"func", "command", "config", "verbose", "threads", "_required"}
    return {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}


def _check_distinct(in_path, out_path) -> None:
    if os.path.abspath(in_path) == os.path.abspath(out_path):
        raise ValueError("input and output paths must differ")


# ---------------------------------------------------------------------------
# Handlers. Each returns the process exit code.


def cmd_synth(args) -> int:
    from .dataset import DevicePrior, generate_synthetic, write_dataset

    prior = DevicePrior.from_file(args.prior) if args.prior else DevicePrior()
    ds = generate_synthetic(args.devices, args.samples, device_prior=prior, seed=args.seed)
    write_dataset(ds, args.out)
    log.info("synth: %d device(s), %d sample(s) -> %s", args.devices, len(ds.samples), args.out)
    return 0


def cmd_ingest(args) -> int:
    from .dataset import load_dataset, write_dataset

    _check_distinct(args.input, args.out)
    ds = load_dataset(args.input)
    write_dataset(ds, args.out)
    log.info("ingest: %d sample(s), %d device(s) -> %s",
             len(ds.samples), len(ds.index), args.out)
    return 0


def cmd_featurize(args) -> int:
    from .dataset import load_dataset
    from .features import featurize_sample, write_features_csv

    _check_distinct(args.input, args.out)
    ds = load_dataset(args.input)
    vectors = [featurize_sample(s, args.fs_target) for s in ds.samples]
    write_features_csv(vectors, args.out)
    log.info("featurize: %d vector(s) at %.1f Hz -> %s", len(vectors), args.fs_target, args.out)
    return 0


def _group_features(path):
    import numpy as np

    from .features import load_features_csv

    vectors = load_features_csv(path)
    if not vectors:
        raise ValueError("feature file is empty")
    X = np.array([fv.values for fv in vectors])
    labels = [fv.device_id for fv in vectors]
    by_dev: dict = {}
    for fv in vectors:
        by_dev.setdefault(fv.device_id, []).append(fv.values)
    return X, labels, {d: np.array(vs) for d, vs in by_dev.items()}


def cmd_train_metric(args) -> int:
    from .metric import save_metric_model, train_ldml

    X, labels, _ = _group_features(args.features)
    model = train_ldml(
        X, labels, d_prime=args.d_prime, iterations=args.iterations,
        step=args.step, seed=args.seed,
    )
    save_metric_model(model, args.out)
    log.info("train-metric: %d vector(s), %d iteration(s) -> %s",
             len(labels), args.iterations, args.out)
    return 0


def _protocol(args, repeats: int):
    from .classify import run_protocol
    from .dataset import load_dataset

    ds = load_dataset(args.input)
    return run_protocol(
        ds, classifier=args.classifier, train_per_device=args.train_per_device,
        repeats=repeats, seed=args.seed, k=args.k, use_ldml=args.use_ldml,
        ldml_iterations=args.ldml_iterations, ldml_step=args.ldml_step,
        d_prime=args.d_prime, n_trees=args.n_trees, fs_target=args.fs_target,
    )


def cmd_classify(args) -> int:
    res = _protocol(args, repeats=1)
    rep = res.reports[0]
    _write_json({
        "command": "classify",
        "config": _config_echo(args),
        "result": {
            "accuracy": rep.accuracy,
            "avg_precision": rep.avg_precision,
            "avg_recall": rep.avg_recall,
            "avg_f": rep.avg_f,
            "n_test": rep.n_test,
            "n_devices": res.n_devices,
            "per_class": {
                label: {"tp": s.tp, "fp": s.fp, "fn": s.fn, "precision": s.precision,
                        "recall": s.recall, "f_score": s.f_score}
                for label, s in rep.per_class.items()
            },
        },
    }, args.out)
    log.info("classify: accuracy %.4f, AvgF %.4f -> %s", rep.accuracy, rep.avg_f, args.out)
    return 0


def cmd_evaluate(args) -> int:
    res = _protocol(args, repeats=args.repeats)
    _write_json({
        "command": "evaluate",
        "config": _config_echo(args),
        "result": {
            "n_devices": res.n_devices,
            "avg_f_mean": res.avg_f_mean,
            "avg_f_ci": list(res.avg_f_ci),
            "accuracy_mean": res.accuracy_mean,
            "per_repeat": [
                {"avg_f": r.avg_f, "accuracy": r.accuracy} for r in res.reports
            ],
        },
    }, args.out)
    log.info("evaluate: %d repeat(s), AvgF %.4f -> %s", args.repeats, res.avg_f_mean, args.out)
    return 0


def cmd_distfit(args) -> int:
    from .distances import ks_statistic, pairwise_distances, rank_families, save_fitted
    from .metric import load_metric_model

    _, _, by_dev = _group_features(args.features)
    model = load_metric_model(args.metric_model) if args.metric_model else None
    intra_pop, inter_pop = pairwise_distances(by_dev, model)
    report = {"command": "distfit", "config": _config_echo(args)}
    for pop, out_path in ((intra_pop, args.intra_out), (inter_pop, args.inter_out)):
        ranking = rank_families(pop.values)
        report[pop.kind] = {
            "n_distances": pop.n,
            "ranking": [
                {"family": f.family, "params": f.params, "log_likelihood": f.log_likelihood,
                 "aic": f.aic, "ks": ks_statistic(pop.values, f)}
                for f in ranking
            ],
        }
        if out_path:
            save_fitted(ranking[0], pop.kind, out_path)
    _write_json(report, args.out)
    log.info("distfit: intra n=%d best %s, inter n=%d best %s -> %s",
             intra_pop.n, report["intra"]["ranking"][0]["family"],
             inter_pop.n, report["inter"]["ranking"][0]["family"], args.out)
    return 0


def cmd_simulate(args) -> int:
    from .distances import load_fitted
    from .simulate import sweep, write_sweep_csv

    if args.k < 1 or args.k % 2 != 1:
        raise ValueError("k must be odd and >= 1")
    kind_a, intra = load_fitted(args.intra)
    kind_b, inter = load_fitted(args.inter)
    if kind_a != "intra" or kind_b != "inter":
        raise ValueError(
            f"expected an intra and an inter fit, got {kind_a!r} and {kind_b!r}"
        )
    result = sweep(args.k, args.train_counts, args.device_counts, args.runs,
                   intra, inter, seed=args.seed)
    write_sweep_csv(result, args.out)
    log.info("simulate: %d cell(s) x %d run(s) -> %s",
             len(result.rows), args.runs, args.out)
    return 0


def cmd_countermeasure(args) -> int:
    from .countermeasures import (
        ObfuscationConfig, QuantizationConfig, apply_countermeasure, privacy_impact,
    )
    from .dataset import load_dataset, write_dataset

    _check_distinct(args.input, args.out)
    ds = load_dataset(args.input)
    obf = ObfuscationConfig(
        offset_range=tuple(args.offset_range), gain_range=tuple(args.gain_range),
        seed=args.seed,
    )
    quant = QuantizationConfig(angle_bin=args.angle_bin, magnitude_bin=args.magnitude_bin)
    out_ds = apply_countermeasure(ds, args.scheme, obfuscation=obf, quantization=quant)
    write_dataset(out_ds, args.out)
    log.info("countermeasure: %s on %d sample(s) -> %s", args.scheme, len(ds.samples), args.out)
    if args.impact_out:
        rep = privacy_impact(
            ds, args.scheme, classifier=args.classifier,
            train_per_device=args.train_per_device, repeats=args.repeats,
            seed=args.seed, obfuscation=obf, quantization=quant,
            k=args.k, n_trees=args.n_trees,
        )
        _write_json({"command": "countermeasure", "config": _config_echo(args),
                     "result": rep.to_dict()}, args.impact_out)
        log.info("privacy impact: AvgF %.4f -> %.4f (drop %.1f%%) -> %s",
                 rep.baseline_avg_f, rep.protected_avg_f,
                 100 * rep.relative_drop, args.impact_out)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.


def _add_protocol_flags(p) -> None:
    p.add_argument("--classifier", choices=("knn", "rf"), default="knn",
                   help="classifier to run (default knn)")
    p.add_argument("--train-per-device", type=int, default=3,
                   help="training samples held out per device (count, default 3)")
    p.add_argument("--k", type=int, default=1, help="neighbors for knn (odd count, default 1)")
    p.add_argument("--n-trees", type=int, default=100,
                   help="trees in the forest (count, default 100)")
    p.add_argument("--use-ldml", action="store_true",
                   help="learn a distance metric on the training split")
    p.add_argument("--ldml-iterations", type=int, default=200,
                   help="metric-learning ascent iterations (count, default 200)")
    p.add_argument("--ldml-step", type=float, default=1e-3,
                   help="metric-learning initial step size (unitless, default 1e-3)")
    p.add_argument("--d-prime", type=int, default=None,
                   help="projected metric dimension (count, default: full)")
    p.add_argument("--fs-target", type=float, default=100.0,
                   help="resampling rate before featurization (Hz, default 100)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (integer, default 0)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="sensorprint", allow_abbrev=False,
                     description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults; explicit flags win (path)")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric-library thread pools; output bytes do not "
                             "depend on it (count, default: library choice)")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    # "required" flags default to None and are checked after the config file
    # is merged, so a config can supply them; explicit flags still win

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--devices", type=int, help="device count (required)")
    p.add_argument("--samples", type=int, default=5, help="sessions per device (count, default 5)")
    p.add_argument("--prior", default=None,
                   help="JSON file of calibration-prior ranges (path, default: built-in)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (integer, default 0)")
    p.add_argument("--out", help="output dataset path (JSONL, required)")
    p.set_defaults(func=cmd_synth, _required=("devices", "out"))

    p = sub.add_parser("ingest", help="validate a dataset file and rewrite it normalized")
    p.add_argument("--in", dest="input", help="input dataset path (JSONL, required)")
    p.add_argument("--out", help="output dataset path (JSONL, required)")
    p.set_defaults(func=cmd_ingest, _required=("input", "out"))

    p = sub.add_parser("featurize", help="extract per-sample feature vectors")
    p.add_argument("--in", dest="input", help="input dataset path (JSONL, required)")
    p.add_argument("--fs-target", type=float, default=100.0,
                   help="uniform resampling rate (Hz, default 100)")
    p.add_argument("--out", help="output feature table path (CSV, required)")
    p.set_defaults(func=cmd_featurize, _required=("input", "out"))

    p = sub.add_parser("train-metric", help="learn a distance metric from labeled features")
    p.add_argument("--features", help="input feature table path (CSV, required)")
    p.add_argument("--iterations", type=int, default=200,
                   help="ascent iterations (count, default 200)")
    p.add_argument("--step", type=float, default=1e-3,
                   help="initial step size (unitless, default 1e-3)")
    p.add_argument("--d-prime", type=int, default=None,
                   help="projected dimension (count, default: full)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (integer, default 0)")
    p.add_argument("--out", help="output model path (JSON, required)")
    p.set_defaults(func=cmd_train_metric, _required=("features", "out"))

    p = sub.add_parser("classify", help="single split: train, predict, report per-class scores")
    p.add_argument("--in", dest="input", help="input dataset path (JSONL, required)")
    _add_protocol_flags(p)
    p.add_argument("--out", help="output report path (JSON, required)")
    p.set_defaults(func=cmd_classify, _required=("input", "out"))

    p = sub.add_parser("evaluate", help="repeated-split protocol with confidence intervals")
    p.add_argument("--in", dest="input", help="input dataset path (JSONL, required)")
    _add_protocol_flags(p)
    p.add_argument("--repeats", type=int, default=10,
                   help="independent splits to average (count, default 10)")
    p.add_argument("--out", help="output report path (JSON, required)")
    p.set_defaults(func=cmd_evaluate, _required=("input", "out"))

    p = sub.add_parser("distfit", help="fit distance distributions to a feature table")
    p.add_argument("--features", help="input feature table path (CSV, required)")
    p.add_argument("--metric-model", default=None,
                   help="distance-metric model applied before distances (path, optional)")
    p.add_argument("--intra-out", default=None,
                   help="write the best same-device fit here (JSON, optional)")
    p.add_argument("--inter-out", default=None,
                   help="write the best cross-device fit here (JSON, optional)")
    p.add_argument("--out", help="output ranking report path (JSON, required)")
    p.set_defaults(func=cmd_distfit, _required=("features", "out"))

    p = sub.add_parser("simulate", help="project identification accuracy to large populations")
    p.add_argument("--intra", help="same-device distance fit (JSON path, required)")
    p.add_argument("--inter", help="cross-device distance fit (JSON path, required)")
    p.add_argument("--k", type=int, default=1, help="neighbors (odd count, default 1)")
    p.add_argument("--train-counts", type=int, nargs="+", default=[3],
                   help="training samples per device, one sweep axis (counts, default 3)")
    p.add_argument("--device-counts", type=int, nargs="+",
                   help="population sizes to sweep (counts, required)")
    p.add_argument("--runs", type=int, default=10000,
                   help="Monte Carlo runs per cell (count, default 10000)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (integer, default 0)")
    p.add_argument("--out", help="output sweep table path (CSV, required)")
    p.set_defaults(func=cmd_simulate,
                   _required=("intra", "inter", "device_counts", "out"))

    p = sub.add_parser("countermeasure", help="transform a dataset with a privacy defense")
    p.add_argument("--in", dest="input", help="input dataset path (JSONL, required)")
    p.add_argument("--scheme", choices=("obfuscate", "quantize"),
                   help="defense to apply (required)")
    p.add_argument("--offset-range", type=float, nargs=2, default=[-1.5, 1.5],
                   metavar=("LO", "HI"),
                   help="obfuscation offset range (m/s^2 accel, rad/s gyro; default -1.5 1.5)")
    p.add_argument("--gain-range", type=float, nargs=2, default=[0.75, 1.25],
                   metavar=("LO", "HI"),
                   help="obfuscation gain range (unitless, default 0.75 1.25)")
    p.add_argument("--angle-bin", type=float, default=6.0,
                   help="quantization bin for angles and gyro rates (degrees, default 6)")
    p.add_argument("--magnitude-bin", type=float, default=1.0,
                   help="quantization bin for accel magnitude (m/s^2, default 1)")
    p.add_argument("--impact-out", default=None,
                   help="also measure the identification cost, report here (JSON, optional)")
    p.add_argument("--classifier", choices=("knn", "rf"), default="rf",
                   help="classifier for the impact report (default rf)")
    p.add_argument("--train-per-device", type=int, default=3,
                   help="training samples per device for the impact report (count, default 3)")
    p.add_argument("--repeats", type=int, default=10,
                   help="protocol repeats for the impact report (count, default 10)")
    p.add_argument("--k", type=int, default=1,
                   help="neighbors for the impact report's knn (odd count, default 1)")
    p.add_argument("--n-trees", type=int, default=100,
                   help="trees for the impact report's forest (count, default 100)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (integer, default 0)")
    p.add_argument("--out", help="output dataset path (JSONL, required)")
    p.set_defaults(func=cmd_countermeasure, _required=("input", "scheme", "out"))

    return parser


def _apply_config(args, argv) -> None:
    """Let a JSON config file fill in flags the user did not pass explicitly."""
    if not args.config:
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ValueError("config file must hold a JSON object")
    known = vars(args)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ValueError(f"unknown config key {key!r}")
        flag = "--" + dest.replace("_", "-")
        explicit = any(a == flag or a.startswith(flag + "=") for a in argv)
        if not explicit:
            setattr(args, dest, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help exits 0; usage errors exit 1 via _Parser.error
        return int(e.code or 0)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in _THREAD_VARS:  # must precede the first numpy import
            os.environ[var] = str(args.threads)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _apply_config(args, argv)
        missing = [n for n in getattr(args, "_required", ()) if getattr(args, n) is None]
        if missing:
            flags = ", ".join(
                "--in" if n == "input" else "--" + n.replace("_", "-") for n in missing
            )
            print(f"{parser.prog} {args.command}: error: missing required "
                  f"arguments: {flags}", file=sys.stderr)
            return 1
        log.info("command %s, config: %s", args.command, json.dumps(_config_echo(args), sort_keys=True))
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
