"""Command-line interface.

Subcommands: synth, ingest, represent, cluster, train, evaluate, sweep,
run, compare. All take flags directly; `run`, `sweep`, and `compare` also
accept a JSON config file whose keys match RunConfig, with command-line
flags winning over file values.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import cluster as cluster_mod
from . import represent as represent_mod
from .cluster import Partition
from .dataset import extract_flows, fit_scale_params, load_tm_series, normalize, split, write_canonical_csv
from .errors import ConfigError, DataError, NumericalError
from .pipeline import (
    Manifest,
    RunConfig,
    compare,
    dump_json,
    run_pipeline,
    sweep,
    validate_config,
)
from .predict import load_model, save_model, train_partitioned
from .synth import GroupSpec, SynthSpec, generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _parse_group(text: str) -> GroupSpec:
    """Group flag format: count:period:amplitude:noise:shape."""
    parts = text.split(":")
    if len(parts) != 5:
        raise ConfigError(
            f"group spec {text!r} must be count:period:amplitude:noise:shape"
        )
    try:
        return GroupSpec(
            n_flows=int(parts[0]),
            period_steps=int(parts[1]),
            amplitude=float(parts[2]),
            noise_std=float(parts[3]),
            shape=parts[4],
        )
    except ValueError as exc:
        raise ConfigError(f"bad group spec {text!r}: {exc}") from None


def _build_run_config(args, require_trace: bool = True) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = RunConfig.from_json(args.config).to_dict()
    overrides = {
        key: getattr(args, key)
        for key in RunConfig.__dataclass_fields__
        if hasattr(args, key) and getattr(args, key) is not None
    }
    base.update(overrides)
    if "trace" not in base or base["trace"] is None:
        if require_trace:
            raise ConfigError("a trace path is required (flag --trace or config key)")
        base["trace"] = ""
    return RunConfig.from_dict(base)


def cmd_synth(args) -> int:
    groups = [_parse_group(g) for g in args.group]
    spec = SynthSpec(
        n_nodes=args.nodes,
        n_steps=args.steps,
        groups=groups,
        seed=args.seed,
        interval_seconds=args.interval_seconds,
    )
    tm, truth = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    trace_path = os.path.join(args.out_dir, "trace.csv")
    write_canonical_csv(tm, trace_path)
    dump_json(truth.to_dict(), os.path.join(args.out_dir, "ground_truth.json"))
    print(f"wrote {trace_path} ({tm.n_steps} steps, {tm.n_flows} flows) and ground_truth.json")
    return EXIT_OK


def cmd_ingest(args) -> int:
    tm = load_tm_series(
        args.input,
        format=args.format,
        interval_seconds=args.interval_seconds,
        missing=args.missing,
    )
    write_canonical_csv(tm, args.out)
    print(
        f"wrote {args.out}: {tm.n_steps} steps, {tm.n_nodes} nodes, "
        f"{tm.interval_seconds}s interval"
    )
    return EXIT_OK


def cmd_represent(args) -> int:
    tm = load_tm_series(args.trace, format=args.format,
                        interval_seconds=args.interval_seconds)
    ranges = split(tm.n_steps, args.train_frac, args.val_frac, args.window_length)
    flows = extract_flows(tm)
    scale = fit_scale_params(flows, (0, ranges.val[1]))
    flows_norm = normalize(flows, scale)
    feats = represent_mod.build_features(
        flows_norm.values[:, : ranges.val[1]],
        args.representation,
        bins=args.bins,
        lags=args.lags,
        fs=args.fs,
        interval_seconds=tm.interval_seconds,
        normalize_power=not args.raw_power,
    )
    diss = represent_mod.pairwise_dissimilarity(feats, args.metric)
    os.makedirs(args.out_dir, exist_ok=True)
    np.savetxt(os.path.join(args.out_dir, "features.csv"), feats.features,
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(args.out_dir, "dissimilarity.csv"), diss.d,
               delimiter=",", fmt="%.17g")
    dump_json(
        {"representation": feats.kind, "metric": diss.metric, **feats.meta},
        os.path.join(args.out_dir, "features_meta.json"),
    )
    print(f"wrote features.csv, dissimilarity.csv, features_meta.json to {args.out_dir}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.method == "naive":
        if args.flows is None:
            raise ConfigError("--method naive requires --flows (number of flows)")
        if args.seed is None:
            raise ConfigError("--method naive requires --seed")
        part = cluster_mod.naive_partition(args.flows, args.k, seed=args.seed)
    else:
        if args.dissimilarity is None:
            raise ConfigError("--method hac requires --dissimilarity CSV")
        d = np.loadtxt(args.dissimilarity, delimiter=",", ndmin=2)
        dendro = cluster_mod.hac(d, linkage=args.linkage)
        with open(os.path.join(args.out_dir, "dendrogram.csv"), "w", encoding="utf-8") as fh:
            fh.write("merge_index,cluster_a,cluster_b,height,new_size\n")
            for i, (a, b, h, s) in enumerate(dendro.merges):
                fh.write(f"{i},{a},{b},{h!r},{s}\n")
        part = cluster_mod.cut(dendro, args.k)
    dump_json(part.to_dict(), os.path.join(args.out_dir, "partition.json"))
    print(f"wrote partition.json (k={part.k}) to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _build_run_config(args)
    tm = load_tm_series(config.trace, format=config.format,
                        interval_seconds=config.interval_seconds,
                        missing=config.missing)
    with open(args.partition, encoding="utf-8") as fh:
        part = Partition.from_dict(json.load(fh))
    ranges = split(tm.n_steps, config.train_frac, config.val_frac, config.window_length)
    flows = extract_flows(tm)
    scale = fit_scale_params(flows, (0, ranges.val[1]))
    flows_norm = normalize(flows, scale)
    results = train_partitioned(
        part, flows_norm.values, config.gru_config(input_size=1),
        ranges.train, ranges.val, config.window_length,
        workers=config.resolve_workers(),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    reports = {}
    for label, (model, report) in sorted(results.items()):
        save_model(model, os.path.join(args.out_dir, f"cluster_{label}.bin"))
        reports[str(label)] = report.to_dict()
    dump_json({"profile": config.profile, "per_cluster": reports},
              os.path.join(args.out_dir, "train_report.json"))
    print(f"trained {part.k} model(s); wrote models and train_report.json to {args.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .dataset import make_windows
    from .evaluate import per_flow_rmse
    from .pipeline import build_eval_report
    from .predict import predict_tm

    config = _build_run_config(args)
    tm = load_tm_series(config.trace, format=config.format,
                        interval_seconds=config.interval_seconds,
                        missing=config.missing)
    with open(args.partition, encoding="utf-8") as fh:
        part = Partition.from_dict(json.load(fh))
    ranges = split(tm.n_steps, config.train_frac, config.val_frac, config.window_length)
    flows = extract_flows(tm)
    scale = fit_scale_params(flows, (0, ranges.val[1]))
    flows_norm = normalize(flows, scale)
    models = {
        label: load_model(os.path.join(args.models, f"cluster_{label}.bin"))
        for label in range(1, part.k + 1)
    }
    pred_norm, tm_pred = predict_tm(
        models, part, flows_norm.values, ranges.test, config.window_length,
        scale, tm.n_nodes, tm.interval_seconds,
    )
    truth_norm = make_windows(
        flows_norm.values[:, ranges.test[0] : ranges.test[1]].T, config.window_length
    ).targets
    hist = config.window_length - 1
    truth_bytes = tm.values[ranges.test[0] + hist : ranges.test[1]]
    report = build_eval_report(config, part, truth_norm, pred_norm,
                               truth_bytes, tm_pred.values, tm.interval_seconds,
                               train_block_len=ranges.val[1])
    os.makedirs(args.out_dir, exist_ok=True)
    dump_json(report.to_dict(), os.path.join(args.out_dir, "eval_report.json"))
    errors = per_flow_rmse(truth_norm, pred_norm)
    with open(os.path.join(args.out_dir, "per_flow_rmse.csv"), "w", encoding="utf-8") as fh:
        fh.write("flow,rmse_normalized\n")
        for i, v in enumerate(errors):
            fh.write(f"{i},{float(v)!r}\n")
    print(f"rmse_normalized={report.rmse_normalized!r} "
          f"rmse_physical_mbps={report.rmse_physical_mbps!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _build_run_config(args)
    if args.k_grid_spec:
        config.k_grid = _parse_grid(args.k_grid_spec)
    curve, knee = sweep(config)
    os.makedirs(args.out_dir, exist_ok=True)
    from .pipeline import write_sweep_csv

    write_sweep_csv(curve, os.path.join(args.out_dir, "sweep.csv"))
    dump_json(knee, os.path.join(args.out_dir, "knee.json"))
    print(f"selected k={knee['selected_k']} (no_knee={knee['no_knee']}); "
          f"wrote sweep.csv and knee.json to {args.out_dir}")
    return EXIT_OK


def _parse_grid(spec: str) -> list[int]:
    """Grid spec: comma list '1,11,21' or range 'start:stop:step' (stop inclusive)."""
    try:
        if ":" in spec:
            parts = [int(p) for p in spec.split(":")]
            if len(parts) == 2:
                start, stop, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                start, stop, step = parts
            else:
                raise ValueError("expected start:stop[:step]")
            return list(range(start, stop + 1, step))
        return [int(p) for p in spec.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad k grid {spec!r}: {exc}") from None


def cmd_run(args) -> int:
    config = _build_run_config(args)
    errors, warnings = validate_config(config)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if errors:
        raise ConfigError("; ".join(errors))
    run_dir = run_pipeline(config, resume=args.resume)
    report_path = os.path.join(run_dir, "eval_report.json")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    print(f"run directory: {run_dir}")
    print(f"rmse_normalized={report['rmse_normalized']!r} "
          f"rmse_physical_mbps={report['rmse_physical_mbps']!r}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _build_run_config(args)
    compare(config, args.out_dir)
    print(f"wrote pairwise_agreement.csv, error_correlation.csv, "
          f"cluster_size_stats.csv to {args.out_dir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _build_run_config(args, require_trace=False)
    errors, warnings = validate_config(config, trace_required=bool(config.trace))
    for e in errors:
        print(f"error: {e}")
    for w in warnings:
        print(f"warning: {w}")
    if errors:
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def _add_run_config_flags(p: argparse.ArgumentParser, with_k: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--trace", help="trace file or directory")
    p.add_argument("--format", choices=("canonical", "abilene", "geant"))
    p.add_argument("--interval-seconds", dest="interval_seconds", type=int)
    p.add_argument("--missing", choices=("reject", "zero"))
    p.add_argument("--representation", choices=("histogram", "acf", "psd", "naive"))
    p.add_argument("--metric", choices=("jsd", "euclidean"))
    p.add_argument("--linkage", choices=("complete", "average"))
    if with_k:
        p.add_argument("--k", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--fs", type=float)
    p.add_argument("--window-length", dest="window_length", type=int)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--profile", choices=("paper", "desk"))
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int,
                   help="worker pool size (default: TMCF_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmcf",
        description="Cluster-based traffic matrix forecasting toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace with planted clusters")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--group", action="append", required=True,
                   help="count:period:amplitude:noise:shape (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interval-seconds", dest="interval_seconds", type=int, default=300)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert a trace to the canonical CSV format")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("canonical", "abilene", "geant"), required=True)
    p.add_argument("--interval-seconds", dest="interval_seconds", type=int)
    p.add_argument("--missing", choices=("reject", "zero"), default="reject")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("represent", help="feature matrix + dissimilarity matrix CSVs")
    p.add_argument("--trace", required=True)
    p.add_argument("--format", choices=("canonical", "abilene", "geant"), default="canonical")
    p.add_argument("--interval-seconds", dest="interval_seconds", type=int)
    p.add_argument("--representation", choices=("histogram", "acf", "psd"), required=True)
    p.add_argument("--metric", choices=("jsd", "euclidean"))
    p.add_argument("--bins", type=int, default=represent_mod.DEFAULT_BINS)
    p.add_argument("--lags", type=int, nargs="+")
    p.add_argument("--fs", type=float)
    p.add_argument("--raw-power", action="store_true",
                   help="skip unit-mass normalization of PSD vectors")
    p.add_argument("--window-length", dest="window_length", type=int, default=11)
    p.add_argument("--train-frac", dest="train_frac", type=float, default=0.8)
    p.add_argument("--val-frac", dest="val_frac", type=float, default=0.1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("cluster", help="cut a HAC dendrogram or draw the naive baseline")
    p.add_argument("--method", choices=("hac", "naive"), default="hac")
    p.add_argument("--dissimilarity", help="M x M CSV (hac)")
    p.add_argument("--linkage", choices=("complete", "average"), default="average")
    p.add_argument("--flows", type=int, help="number of flows (naive)")
    p.add_argument("--seed", type=int, help="naive partition seed")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train one forecaster per cluster")
    _add_run_config_flags(p, with_k=False)
    p.add_argument("--partition", required=True, help="partition JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score saved models on the test region")
    _add_run_config_flags(p, with_k=False)
    p.add_argument("--partition", required=True)
    p.add_argument("--models", required=True, help="directory of cluster_<id>.bin files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="RMSE-versus-K sweep with knee selection")
    _add_run_config_flags(p, with_k=False)
    p.add_argument("--k-grid", dest="k_grid_spec",
                   help="comma list '1,11,21' or range 'start:stop:step'")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", help="full pipeline into a reproducible run directory")
    _add_run_config_flags(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--resume", action="store_true",
                   help="reuse unchanged stage artifacts from the run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="cross-method agreement tables at matched K")
    _add_run_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a config without running")
    _add_run_config_flags(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
