"""End-to-end run orchestration with reproducible run directories.

A run executes ingest -> extract -> normalize -> represent -> cluster ->
train -> predict -> evaluate, writing every intermediate artifact plus a
manifest (config echo, seeds, versions, stage wall times, content hashes).
Re-running with the same config and seeds reproduces byte-identical metric
outputs; with resume=True, stages whose config hash is unchanged are loaded
from the run directory instead of recomputed.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import __version__
from . import cluster as cluster_mod
from . import represent as represent_mod
from .cluster import Partition
from .dataset import (
    FlowSet,
    TmSeries,
    extract_flows,
    fit_scale_params,
    load_tm_series,
    make_windows,
    normalize,
    split,
    write_canonical_csv,
)
from .errors import ConfigError, ValidationError
from .evaluate import (
    ClusterStats,
    EvalReport,
    SweepCurve,
    cluster_stats,
    error_correlation,
    kneedle,
    nmi,
    per_flow_rmse,
    rmse,
    rmse_physical,
)
from .evaluate import ari as ari_score
from .evaluate import k_sweep as run_k_sweep
from .predict import GruConfig, load_model, predict_tm, save_model, train_partitioned

METHODS = ("histogram", "acf", "psd", "naive")
PROFILE_NAMES = ("paper", "desk")

# traces above this many flow-observations trigger a paper-profile warning
_PAPER_PROFILE_BUDGET = 2_000_000


@dataclass
class RunConfig:
    """Everything a pipeline run depends on; JSON-serializable."""

    trace: str
    representation: str = "histogram"
    format: str = "canonical"
    interval_seconds: int | None = None
    missing: str = "reject"
    metric: str | None = None
    linkage: str | None = None
    k: int | None = None
    k_grid: list[int] | None = None
    repetitions: int = 5
    bins: int = represent_mod.DEFAULT_BINS
    lags: list[int] | None = None
    fs: float | None = None
    normalize_power: bool = True
    segment_length: int | None = None
    window_length: int = 11
    train_frac: float = 0.8
    val_frac: float = 0.1
    profile: str = "desk"
    hidden_size: int | None = None
    epochs: int | None = None
    seed: int | None = 0
    workers: int | None = None
    out_dir: str = "runs/run"
    units: str = "bytes_per_interval"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def resolve_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get("TMCF_WORKERS")
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"TMCF_WORKERS must be an integer, got {env!r}") from None
        return 1

    def gru_config(self, input_size: int) -> GruConfig:
        overrides = {}
        if self.hidden_size is not None:
            overrides["hidden_size"] = self.hidden_size
        if self.epochs is not None:
            overrides["epochs"] = self.epochs
        return GruConfig.for_profile(
            self.profile, input_size=input_size, seed=self.seed or 0, **overrides
        )


def validate_config(config: RunConfig, trace_required: bool = True) -> tuple[list[str], list[str]]:
    """Collect configuration errors and warnings without raising."""
    errors: list[str] = []
    warnings: list[str] = []
    if config.representation not in METHODS:
        errors.append(
            f"representation must be one of {METHODS}, got {config.representation!r}"
        )
    if config.format not in ("canonical", "abilene", "geant"):
        errors.append(f"unknown trace format {config.format!r}")
    if config.missing not in ("reject", "zero"):
        errors.append(f"missing policy must be 'reject' or 'zero', got {config.missing!r}")
    if trace_required and not os.path.exists(config.trace):
        errors.append(f"trace path does not exist: {config.trace}")
    if config.metric is not None:
        if config.metric not in represent_mod.METRICS:
            errors.append(f"metric must be one of {represent_mod.METRICS}")
        elif config.metric == "jsd" and config.representation != "histogram":
            errors.append(
                f"metric 'jsd' is only compatible with the histogram representation, "
                f"not {config.representation!r}"
            )
    if config.linkage is not None and config.linkage not in cluster_mod.LINKAGES:
        errors.append(f"linkage must be one of {cluster_mod.LINKAGES}")
    if config.representation == "naive":
        if config.seed is None:
            errors.append("the naive representation requires an explicit seed")
        if config.linkage is not None or config.metric is not None:
            warnings.append("linkage/metric are ignored by the naive representation")
    if config.k is not None and config.k < 1:
        errors.append(f"k must be >= 1, got {config.k}")
    if config.k_grid is not None and (
        not config.k_grid or any(k < 1 for k in config.k_grid)
    ):
        errors.append("k_grid must be a nonempty list of integers >= 1")
    if config.repetitions < 1:
        errors.append(f"repetitions must be >= 1, got {config.repetitions}")
    if not 0.0 < config.train_frac < 1.0:
        errors.append(f"train_frac must be in (0, 1), got {config.train_frac}")
    if not 0.0 <= config.val_frac < 1.0:
        errors.append(f"val_frac must be in [0, 1), got {config.val_frac}")
    if config.window_length < 2:
        errors.append(f"window_length must be >= 2, got {config.window_length}")
    if config.bins < 1:
        errors.append(f"bins must be >= 1, got {config.bins}")
    if config.profile not in PROFILE_NAMES:
        errors.append(f"profile must be one of {PROFILE_NAMES}, got {config.profile!r}")
    else:
        if config.profile == "desk" and (config.hidden_size or 0) > 64:
            warnings.append(
                f"desk profile with hidden_size={config.hidden_size} override will be slow; "
                "use profile=paper if full-scale settings are intended"
            )
        if config.profile == "paper" and trace_required and os.path.exists(config.trace):
            size = os.path.getsize(config.trace)
            if size > 8 * _PAPER_PROFILE_BUDGET:
                warnings.append(
                    "paper profile on a large trace: expect hours of training "
                    "(hidden 200, 100 epochs per cluster)"
                )
    if config.units != "bytes_per_interval":
        warnings.append(
            f"trace units {config.units!r}: physical RMSE assumes bytes per interval "
            "and will be skipped"
        )
    return errors, warnings


def require_valid(config: RunConfig, trace_required: bool = True) -> list[str]:
    errors, warnings = validate_config(config, trace_required)
    if errors:
        raise ConfigError("; ".join(errors))
    return warnings


# ---------------------------------------------------------------------------
# Manifest and artifact helpers
# ---------------------------------------------------------------------------


def dump_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def config_hash(payload) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


class Manifest:
    """Stage ledger of one run directory."""

    def __init__(self, run_dir: str, config: RunConfig):
        self.path = os.path.join(run_dir, "manifest.json")
        self.data = {
            "config": config.to_dict(),
            "config_hash": config_hash(config.to_dict()),
            "versions": {
                "tmcf": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "stages": {},
        }

    def load_previous(self) -> dict:
        if os.path.exists(self.path):
            try:
                return load_json(self.path).get("stages", {})
            except (json.JSONDecodeError, OSError):
                return {}
        return {}

    def record(self, stage: str, stage_hash: str, wall_time: float, artifacts: list[str]):
        self.data["stages"][stage] = {
            "hash": stage_hash,
            "wall_time_seconds": wall_time,
            "artifacts": artifacts,
        }

    def write(self) -> None:
        dump_json(self.data, self.path)


def _write_matrix_csv(matrix: np.ndarray, path: str) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")


def _write_dendrogram_csv(dendro: cluster_mod.Dendrogram, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("merge_index,cluster_a,cluster_b,height,new_size\n")
        for i, (a, b, height, size) in enumerate(dendro.merges):
            fh.write(f"{i},{a},{b},{height!r},{size}\n")


def write_sweep_csv(curve: SweepCurve, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,mean_rmse,rmse_std,mean_runtime_s\n")
        for k, mr, sd, rt in zip(
            curve.k_values, curve.mean_rmse, curve.rmse_std, curve.mean_runtime_seconds
        ):
            fh.write(f"{k},{mr!r},{sd!r},{rt!r}\n")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _prepare(config: RunConfig):
    tm = load_tm_series(
        config.trace,
        format=config.format,
        interval_seconds=config.interval_seconds,
        missing=config.missing,
    )
    ranges = split(tm.n_steps, config.train_frac, config.val_frac, config.window_length)
    flows = extract_flows(tm)
    scale = fit_scale_params(flows, (0, ranges.val[1]))
    flows_norm = normalize(flows, scale)
    return tm, flows_norm, scale, ranges


def _partition_for(config: RunConfig, tm: TmSeries, flows_norm: FlowSet, ranges, run_dir=None):
    """Representation + clustering stages; returns (partition, dendro, diss, feats)."""
    m = tm.n_flows
    k = config.k
    if k is None or not 1 <= k <= m:
        raise ConfigError(f"k must lie in [1, {m}], got {k}")
    if config.representation == "naive":
        return cluster_mod.naive_partition(m, k, seed=config.seed), None, None, None
    train_block = flows_norm.values[:, : ranges.val[1]]
    feats = represent_mod.build_features(
        FlowSet(tm.n_nodes, tm.interval_seconds, train_block),
        config.representation,
        bins=config.bins,
        lags=config.lags,
        fs=config.fs,
        normalize_power=config.normalize_power,
        segment_length=config.segment_length,
    )
    diss = represent_mod.pairwise_dissimilarity(feats, config.metric)
    linkage = config.linkage or cluster_mod.DEFAULT_LINKAGE[config.representation]
    dendro = cluster_mod.hac(diss.d, linkage)
    part = cluster_mod.cut(dendro, k)
    part.method = config.representation
    return part, dendro, diss, feats


def run_pipeline(config: RunConfig, resume: bool = False) -> str:
    """Execute the full pipeline; returns the run directory path."""
    warnings = require_valid(config)
    run_dir = config.out_dir
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "models"), exist_ok=True)
    manifest = Manifest(run_dir, config)
    previous = manifest.load_previous() if resume else {}
    cfg = config.to_dict()

    def stage(name: str, keys: list[str], upstream: str, artifacts: list[str]):
        payload = {"stage": name, "upstream": upstream}
        payload.update({k: cfg[k] for k in keys})
        h = config_hash(payload)
        prev = previous.get(name)
        reusable = (
            resume
            and prev is not None
            and prev.get("hash") == h
            and all(os.path.exists(os.path.join(run_dir, a)) for a in artifacts)
        )
        return h, reusable

    # --- ingest + extract + normalize -------------------------------------
    t0 = time.perf_counter()
    ingest_hash, _ = stage(
        "ingest",
        ["trace", "format", "interval_seconds", "missing", "train_frac", "val_frac",
         "window_length"],
        "",
        [],
    )
    tm, flows_norm, scale, ranges = _prepare(config)
    write_canonical_csv(tm, os.path.join(run_dir, "trace.csv"))
    dump_json(
        {
            "n_nodes": tm.n_nodes,
            "n_steps": tm.n_steps,
            "interval_seconds": tm.interval_seconds,
            "splits": ranges.as_dict(),
            "normalize": "per_flow",
            "scale_min": [float(v) for v in scale.per_flow_min],
            "scale_max": [float(v) for v in scale.per_flow_max],
        },
        os.path.join(run_dir, "scale.json"),
    )
    np.savez_compressed(os.path.join(run_dir, "flows_norm.npz"), flows=flows_norm.values)
    manifest.record(
        "ingest", ingest_hash, time.perf_counter() - t0,
        ["trace.csv", "scale.json", "flows_norm.npz"],
    )

    # --- represent + cluster ----------------------------------------------
    t0 = time.perf_counter()
    cluster_hash, reuse_cluster = stage(
        "cluster",
        ["representation", "metric", "linkage", "k", "bins", "lags", "fs",
         "normalize_power", "segment_length", "seed"],
        ingest_hash,
        ["partition.json"],
    )
    if reuse_cluster:
        part = Partition.from_dict(load_json(os.path.join(run_dir, "partition.json")))
        cluster_artifacts = previous["cluster"]["artifacts"]
    else:
        part, dendro, diss, feats = _partition_for(config, tm, flows_norm, ranges)
        dump_json(part.to_dict(), os.path.join(run_dir, "partition.json"))
        cluster_artifacts = ["partition.json"]
        if dendro is not None:
            _write_dendrogram_csv(dendro, os.path.join(run_dir, "dendrogram.csv"))
            _write_matrix_csv(diss.d, os.path.join(run_dir, "dissimilarity.csv"))
            _write_matrix_csv(feats.features, os.path.join(run_dir, "features.csv"))
            dump_json(feats.meta, os.path.join(run_dir, "features_meta.json"))
            cluster_artifacts += [
                "dendrogram.csv", "dissimilarity.csv", "features.csv", "features_meta.json",
            ]
    manifest.record("cluster", cluster_hash, time.perf_counter() - t0, cluster_artifacts)

    # --- train ---------------------------------------------------------------
    t0 = time.perf_counter()
    train_hash, reuse_train = stage(
        "train",
        ["profile", "hidden_size", "epochs", "seed"],
        cluster_hash,
        [f"models/cluster_{label}.bin" for label in range(1, part.k + 1)],
    )
    gru_cfg = config.gru_config(input_size=1)
    if reuse_train:
        models = {
            label: load_model(os.path.join(run_dir, "models", f"cluster_{label}.bin"))
            for label in range(1, part.k + 1)
        }
        train_artifacts = previous["train"]["artifacts"]
    else:
        results = train_partitioned(
            part, flows_norm.values, gru_cfg,
            ranges.train, ranges.val, config.window_length,
            workers=config.resolve_workers(),
        )
        models = {}
        reports = {}
        train_artifacts = []
        for label, (model, report) in sorted(results.items()):
            fname = f"cluster_{label}.bin"
            save_model(model, os.path.join(run_dir, "models", fname))
            models[label] = model
            reports[str(label)] = report.to_dict()
            train_artifacts.append(f"models/{fname}")
        dump_json(
            {"profile": config.profile, "per_cluster": reports},
            os.path.join(run_dir, "train_report.json"),
        )
        train_artifacts.append("train_report.json")
    manifest.record("train", train_hash, time.perf_counter() - t0, train_artifacts)

    # --- predict + evaluate ---------------------------------------------------
    t0 = time.perf_counter()
    pred_norm, tm_pred = predict_tm(
        models, part, flows_norm.values, ranges.test, config.window_length,
        scale, tm.n_nodes, tm.interval_seconds,
    )
    truth_norm = make_windows(
        flows_norm.values[:, ranges.test[0] : ranges.test[1]].T, config.window_length
    ).targets
    hist = config.window_length - 1
    truth_bytes = tm.values[ranges.test[0] + hist : ranges.test[1]]
    np.savez_compressed(
        os.path.join(run_dir, "predictions.npz"),
        pred_norm=pred_norm,
        pred_bytes=tm_pred.values,
        truth_norm=truth_norm,
        truth_bytes=truth_bytes,
    )
    report = build_eval_report(config, part, truth_norm, pred_norm, truth_bytes,
                               tm_pred.values, tm.interval_seconds,
                               train_block_len=ranges.val[1])
    dump_json(report.to_dict(), os.path.join(run_dir, "eval_report.json"))
    flow_errors = per_flow_rmse(truth_norm, pred_norm)
    with open(os.path.join(run_dir, "per_flow_rmse.csv"), "w", encoding="utf-8") as fh:
        fh.write("flow,rmse_normalized\n")
        for i, v in enumerate(flow_errors):
            fh.write(f"{i},{float(v)!r}\n")
    manifest.record(
        "evaluate",
        config_hash({"stage": "evaluate", "upstream": train_hash}),
        time.perf_counter() - t0,
        ["predictions.npz", "eval_report.json", "per_flow_rmse.csv"],
    )
    if warnings:
        manifest.data["warnings"] = warnings
    manifest.write()
    return run_dir


def build_eval_report(
    config: RunConfig,
    part: Partition,
    truth_norm: np.ndarray,
    pred_norm: np.ndarray,
    truth_bytes: np.ndarray,
    pred_bytes: np.ndarray,
    interval_seconds: int,
    train_block_len: int | None = None,
) -> EvalReport:
    stats = cluster_stats(part)
    flow_errors = per_flow_rmse(truth_norm, pred_norm)
    metadata = {
        "normalize": "per_flow",
        "scale_fit": "training_region_only",
        "nmi_normalization": "arithmetic_mean_of_entropies",
        "units": config.units,
        "interval_seconds": interval_seconds,
    }
    if config.representation == "psd":
        metadata["welch"] = represent_mod.welch_settings(
            train_block_len or truth_norm.shape[0], config.segment_length
        )
        metadata["normalize_power"] = config.normalize_power
    physical = (
        rmse_physical(truth_bytes, pred_bytes, interval_seconds)
        if config.units == "bytes_per_interval"
        else float("nan")
    )
    return EvalReport(
        rmse_normalized=rmse(truth_norm, pred_norm),
        rmse_physical_mbps=physical,
        per_flow_rmse=[float(v) for v in flow_errors],
        partition={
            "method": part.method,
            "k": int(part.k),
            "seed": part.seed,
            "cluster_stats": stats.to_dict(),
        },
        config=config.to_dict(),
        metadata=metadata,
    )


def sweep(config: RunConfig) -> tuple[SweepCurve, dict]:
    """K-sweep plus Kneedle knee selection; returns (curve, knee payload)."""
    require_valid(config)
    if not config.k_grid:
        raise ConfigError("sweep requires k_grid")
    tm = load_tm_series(
        config.trace, format=config.format,
        interval_seconds=config.interval_seconds, missing=config.missing,
    )
    curve = run_k_sweep(
        tm,
        config.representation,
        config.k_grid,
        repetitions=config.repetitions,
        profile=config.profile,
        seed=config.seed or 0,
        window_length=config.window_length,
        train_frac=config.train_frac,
        val_frac=config.val_frac,
        bins=config.bins,
        lags=config.lags,
        fs=config.fs,
        normalize_power=config.normalize_power,
        linkage=config.linkage,
        workers=config.resolve_workers(),
    )
    knee = kneedle(curve)
    return curve, {"selected_k": knee.k, "no_knee": knee.no_knee}


def compare(config: RunConfig, out_dir: str) -> dict:
    """Cross-method comparison at matched K: pairwise ARI/NMI, per-flow error
    correlations, and cluster-size statistics, written as three CSVs."""
    require_valid(config)
    if config.k is None:
        raise ConfigError("compare requires k")
    if config.seed is None:
        raise ConfigError("compare requires a seed (naive baseline is included)")
    os.makedirs(out_dir, exist_ok=True)
    tm, flows_norm, scale, ranges = _prepare(config)

    partitions: dict[str, Partition] = {}
    flow_errs: dict[str, np.ndarray] = {}
    sizes: dict[str, ClusterStats] = {}
    truth_norm = make_windows(
        flows_norm.values[:, ranges.test[0] : ranges.test[1]].T, config.window_length
    ).targets
    for method in METHODS:
        mcfg = RunConfig.from_dict({**config.to_dict(), "representation": method,
                                    "metric": None, "linkage": None})
        part, _, _, _ = _partition_for(mcfg, tm, flows_norm, ranges)
        partitions[method] = part
        results = train_partitioned(
            part, flows_norm.values, mcfg.gru_config(input_size=1),
            ranges.train, ranges.val, config.window_length,
            workers=config.resolve_workers(),
        )
        models = {label: mr[0] for label, mr in results.items()}
        pred_norm, _ = predict_tm(
            models, part, flows_norm.values, ranges.test, config.window_length,
            scale, tm.n_nodes, tm.interval_seconds,
        )
        flow_errs[method] = per_flow_rmse(truth_norm, pred_norm)
        sizes[method] = cluster_stats(part)

    pairs = [(a, b) for i, a in enumerate(METHODS) for b in METHODS[i + 1 :]]
    with open(os.path.join(out_dir, "pairwise_agreement.csv"), "w", encoding="utf-8") as fh:
        fh.write("method_a,method_b,nmi,ari\n")
        for a, b in pairs:
            fh.write(
                f"{a},{b},{nmi(partitions[a], partitions[b])!r},"
                f"{ari_score(partitions[a], partitions[b])!r}\n"
            )
    with open(os.path.join(out_dir, "error_correlation.csv"), "w", encoding="utf-8") as fh:
        fh.write("method_a,method_b,pearson_correlation\n")
        for a, b in pairs:
            fh.write(f"{a},{b},{error_correlation(flow_errs[a], flow_errs[b])!r}\n")
    with open(os.path.join(out_dir, "cluster_size_stats.csv"), "w", encoding="utf-8") as fh:
        fh.write("method,k,min_size,mean_size,max_size,n_singletons,singleton_pct\n")
        for method in METHODS:
            s = sizes[method]
            fh.write(
                f"{method},{s.k},{s.min_size},{s.mean_size!r},{s.max_size},"
                f"{s.n_singletons},{s.singleton_pct!r}\n"
            )
    return {
        "partitions": {m: partitions[m].to_dict() for m in METHODS},
        "per_flow_rmse": {m: [float(v) for v in flow_errs[m]] for m in METHODS},
    }
