"""Evaluation battery: RMSE, clustering agreement, sweeps, knee selection.

Scalar RMSE pools the squared errors of every test sample and matrix entry
(matching the single-sum definition), so it is NOT the mean of per-flow
RMSEs. Physical RMSE converts byte-per-interval errors to Mbps before
squaring. Partition agreement uses the adjusted Rand index and mutual
information normalized by the arithmetic mean of the label entropies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import cluster as cluster_mod
from . import represent as represent_mod
from .cluster import Partition
from .dataset import (
    FlowSet,
    TmSeries,
    extract_flows,
    fit_scale_params,
    make_windows,
    normalize,
    split,
)
from .errors import ValidationError
from .predict import GruConfig, predict_tm, train_partitioned

BYTES_TO_MEGABITS = 8.0 / 1e6


@dataclass
class ClusterStats:
    """Size distribution of one partition."""

    k: int
    min_size: int
    mean_size: float
    max_size: int
    n_singletons: int
    singleton_pct: float

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "min_size": self.min_size,
            "mean_size": self.mean_size,
            "max_size": self.max_size,
            "n_singletons": self.n_singletons,
            "singleton_pct": self.singleton_pct,
        }


@dataclass
class SweepCurve:
    """Mean/std RMSE and mean runtime per swept cluster count."""

    k_values: list[int]
    mean_rmse: list[float]
    rmse_std: list[float]
    mean_runtime_seconds: list[float]
    repetitions: int

    def __post_init__(self):
        lengths = {
            len(self.k_values),
            len(self.mean_rmse),
            len(self.rmse_std),
            len(self.mean_runtime_seconds),
        }
        if len(lengths) != 1:
            raise ValidationError("sweep curve columns must have equal lengths")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        if list(self.k_values) != sorted(self.k_values):
            raise ValidationError("k_values must be increasing")

    def to_dict(self) -> dict:
        return {
            "k_values": [int(k) for k in self.k_values],
            "mean_rmse": self.mean_rmse,
            "rmse_std": self.rmse_std,
            "mean_runtime_seconds": self.mean_runtime_seconds,
            "repetitions": self.repetitions,
        }


@dataclass
class KneeResult:
    """Selected operating K; no_knee marks the argmin fallback."""

    k: int
    no_knee: bool


@dataclass
class EvalReport:
    """Prediction quality of one run plus enough metadata to reproduce it."""

    rmse_normalized: float
    rmse_physical_mbps: float
    per_flow_rmse: list[float]
    partition: dict
    config: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rmse_normalized": self.rmse_normalized,
            "rmse_physical_mbps": self.rmse_physical_mbps,
            "per_flow_rmse": self.per_flow_rmse,
            "partition": self.partition,
            "config": self.config,
            "metadata": self.metadata,
        }


def _as_array(x) -> np.ndarray:
    if isinstance(x, TmSeries):
        return x.values
    return np.asarray(x, dtype=np.float64)


def rmse(truth, pred) -> float:
    """Root mean squared error pooled over all samples and entries."""
    t = _as_array(truth)
    p = _as_array(pred)
    if t.shape != p.shape:
        raise ValidationError(f"shape mismatch: truth {t.shape} vs pred {p.shape}")
    diff = t - p
    return float(np.sqrt(np.mean(diff * diff)))


def rmse_physical(truth, pred, interval_seconds: int, units: str = "bytes_per_interval") -> float:
    """RMSE in Mbps: byte-per-interval errors are converted via
    bytes * 8 / (interval_seconds * 1e6) before squaring."""
    if units != "bytes_per_interval":
        raise ValidationError(
            f"unknown trace units {units!r}; expected 'bytes_per_interval'"
        )
    if interval_seconds < 1:
        raise ValidationError(f"interval_seconds must be positive, got {interval_seconds}")
    factor = BYTES_TO_MEGABITS / interval_seconds
    return rmse(_as_array(truth) * factor, _as_array(pred) * factor)


def per_flow_rmse(truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """RMSE per flow over (samples, M) matrices; pooling the squares of this
    vector reproduces the scalar RMSE."""
    t = _as_array(truth)
    p = _as_array(pred)
    if t.shape != p.shape or t.ndim != 2:
        raise ValidationError("per-flow RMSE needs matching (samples, M) matrices")
    diff = t - p
    return np.sqrt(np.mean(diff * diff, axis=0))


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    ka = ia.max() + 1
    kb = ib.max() + 1
    return np.bincount(ia * kb + ib, minlength=ka * kb).reshape(ka, kb)


def _labels_of(p) -> np.ndarray:
    if isinstance(p, Partition):
        return p.labels
    return np.asarray(p)


def _comb2(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1.0) / 2.0


def ari(a, b) -> float:
    """Adjusted Rand index from the label contingency table.

    1.0 for identical partitions up to relabeling; 0 expected for independent
    partitions; can be negative. Degenerate cases where the index cannot
    deviate from its expectation (both trivial partitions) return 1.0.
    """
    la, lb = _labels_of(a), _labels_of(b)
    if la.shape != lb.shape:
        raise ValidationError(f"partition lengths differ: {la.shape} vs {lb.shape}")
    n = la.size
    cont = _contingency(la, lb)
    sum_ij = _comb2(cont).sum()
    sum_a = _comb2(cont.sum(axis=1)).sum()
    sum_b = _comb2(cont.sum(axis=0)).sum()
    total = _comb2(np.array([n]))[0]
    expected = sum_a * sum_b / total
    denom = 0.5 * (sum_a + sum_b) - expected
    if denom == 0.0:
        return 1.0
    return float((sum_ij - expected) / denom)


def nmi(a, b) -> float:
    """Mutual information normalized by the arithmetic mean of the two label
    entropies; zero-entropy (single-cluster) cases return 0 by convention."""
    la, lb = _labels_of(a), _labels_of(b)
    if la.shape != lb.shape:
        raise ValidationError(f"partition lengths differ: {la.shape} vs {lb.shape}")
    n = la.size
    cont = _contingency(la, lb).astype(np.float64)
    pij = cont / n
    pa = pij.sum(axis=1)
    pb = pij.sum(axis=0)
    ha = -np.sum(pa[pa > 0] * np.log(pa[pa > 0]))
    hb = -np.sum(pb[pb > 0] * np.log(pb[pb > 0]))
    if ha == 0.0 or hb == 0.0:
        return 0.0
    outer = pa[:, None] * pb[None, :]
    mask = pij > 0
    mi = float(np.sum(pij[mask] * np.log(pij[mask] / outer[mask])))
    value = mi / (0.5 * (ha + hb))
    return float(min(max(value, 0.0), 1.0))


def cluster_stats(p: Partition) -> ClusterStats:
    sizes = p.cluster_sizes()
    n_single = int(np.sum(sizes == 1))
    return ClusterStats(
        k=p.k,
        min_size=int(sizes.min()),
        mean_size=float(p.n_items / p.k),
        max_size=int(sizes.max()),
        n_singletons=n_single,
        singleton_pct=100.0 * n_single / p.k,
    )


def error_correlation(e_a: np.ndarray, e_b: np.ndarray) -> float:
    """Pearson correlation of two per-flow error vectors; NaN flags the
    undefined zero-variance case."""
    x = np.asarray(e_a, dtype=np.float64)
    y = np.asarray(e_b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("error vectors must be equal-length 1-D with >= 2 entries")
    xm = x - x.mean()
    ym = y - y.mean()
    denom = np.sqrt(np.sum(xm * xm) * np.sum(ym * ym))
    if denom == 0.0:
        return float("nan")
    return float(np.sum(xm * ym) / denom)


def kneedle(curve, rmse_values=None, sensitivity: float = 1.0) -> KneeResult:
    """Knee of a decreasing performance-vs-K curve.

    Accepts a SweepCurve or a pair of arrays (k values, rmse values).
    Normalizes both axes to [0, 1], flips the decreasing curve into
    increasing-concave form, and scans the difference curve y_d = y_n - x_n.
    Interior local maxima are knee candidates; a candidate is confirmed when
    the difference curve later drops below y_d - sensitivity * mean(dx)
    before the next candidate. The confirmed candidate with the largest
    difference value is returned. If nothing is confirmed (e.g. a straight
    line), the argmin-RMSE K is returned with no_knee set.
    """
    if isinstance(curve, SweepCurve):
        ks = np.asarray(curve.k_values, dtype=np.float64)
        ys = np.asarray(curve.mean_rmse, dtype=np.float64)
    else:
        ks = np.asarray(curve, dtype=np.float64)
        ys = np.asarray(rmse_values, dtype=np.float64)
    if ks.size != ys.size or ks.size < 3:
        raise ValidationError("need at least 3 (k, rmse) points to locate a knee")
    argmin_k = int(ks[int(np.argmin(ys))])
    span_y = ys.max() - ys.min()
    if span_y == 0.0:
        return KneeResult(k=argmin_k, no_knee=True)
    x_n = (ks - ks.min()) / (ks.max() - ks.min())
    y_n = 1.0 - (ys - ys.min()) / span_y
    y_d = y_n - x_n

    candidates = [
        i for i in range(1, y_d.size - 1) if y_d[i] > y_d[i - 1] and y_d[i] >= y_d[i + 1]
    ]
    mean_dx = float(np.mean(np.diff(x_n)))
    confirmed = []
    for pos, i in enumerate(candidates):
        threshold = y_d[i] - sensitivity * mean_dx
        stop = candidates[pos + 1] if pos + 1 < len(candidates) else y_d.size
        if np.any(y_d[i + 1 : stop] < threshold):
            confirmed.append(i)
    if not confirmed:
        return KneeResult(k=argmin_k, no_knee=True)
    best = max(confirmed, key=lambda i: (y_d[i], -i))
    return KneeResult(k=int(ks[best]), no_knee=False)


def k_sweep(
    trace: TmSeries,
    representation: str,
    k_grid,
    repetitions: int = 5,
    profile: str = "desk",
    seed: int = 0,
    window_length: int = 11,
    train_frac: float = 0.8,
    val_frac: float = 0.1,
    bins: int = represent_mod.DEFAULT_BINS,
    lags=None,
    fs: float | None = None,
    normalize_power: bool = True,
    linkage: str | None = None,
    workers: int = 1,
) -> SweepCurve:
    """RMSE-versus-K curve for one representation.

    For representation-based methods the dendrogram is deterministic and
    reused across the grid; repetitions vary the predictor seed. The naive
    baseline additionally re-seeds its random partition per repetition.
    """
    k_grid = sorted(set(int(k) for k in k_grid))
    m = trace.n_flows
    if not k_grid or k_grid[0] < 1 or k_grid[-1] > m:
        raise ValidationError(f"k grid must lie within [1, {m}]")
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")

    flows = extract_flows(trace)
    ranges = split(trace.n_steps, train_frac, val_frac, window_length)
    scale = fit_scale_params(flows, (0, ranges.val[1]))
    flows_norm = normalize(flows, scale)

    dendro = None
    if representation != "naive":
        feats = represent_mod.build_features(
            FlowSet(trace.n_nodes, trace.interval_seconds,
                    flows_norm.values[:, : ranges.val[1]]),
            representation,
            bins=bins,
            lags=lags,
            fs=fs,
            normalize_power=normalize_power,
        )
        diss = represent_mod.pairwise_dissimilarity(feats)
        dendro = cluster_mod.hac(
            diss.d, linkage or cluster_mod.DEFAULT_LINKAGE[representation]
        )

    mean_rmse = []
    rmse_std = []
    mean_runtime = []
    for k in k_grid:
        vals = []
        times = []
        for rep in range(repetitions):
            t0 = time.perf_counter()
            if representation == "naive":
                part = cluster_mod.naive_partition(m, k, seed=seed + rep)
            else:
                part = cluster_mod.cut(dendro, k)
            config = GruConfig.for_profile(profile, input_size=1, seed=seed + rep)
            results = train_partitioned(
                part, flows_norm.values, config,
                ranges.train, ranges.val, window_length, workers=workers,
            )
            models = {label: mr[0] for label, mr in results.items()}
            pred_norm, _ = predict_tm(
                models, part, flows_norm.values, ranges.test, window_length,
                scale, trace.n_nodes, trace.interval_seconds,
            )
            truth_norm = make_windows(
                flows_norm.values[:, ranges.test[0] : ranges.test[1]].T, window_length
            ).targets
            vals.append(rmse(truth_norm, pred_norm))
            times.append(time.perf_counter() - t0)
        arr = np.asarray(vals)
        mean_rmse.append(float(arr.mean()))
        rmse_std.append(float(arr.std()))
        mean_runtime.append(float(np.mean(times)))
    return SweepCurve(
        k_values=k_grid,
        mean_rmse=mean_rmse,
        rmse_std=rmse_std,
        mean_runtime_seconds=mean_runtime,
        repetitions=repetitions,
    )
