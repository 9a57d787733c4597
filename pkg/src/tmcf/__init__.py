"""Cluster-based traffic matrix forecasting toolkit.

Extracts per-flow time series from traffic matrix traces, clusters flows
under histogram/ACF/PSD representations (or a random baseline), trains one
recurrent forecaster per cluster, and evaluates one-step-ahead prediction.
"""

__version__ = "0.1.0"

from .cluster import Dendrogram, Partition, cut, hac, naive_partition
from .dataset import (
    FlowSet,
    ScaleParams,
    TmSeries,
    WindowedDataset,
    denormalize,
    extract_flows,
    fit_scale_params,
    load_tm_series,
    make_windows,
    normalize,
    reassemble,
    split,
    write_canonical_csv,
)
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    ParseError,
    TmcfError,
    ValidationError,
)
from .evaluate import (
    ClusterStats,
    EvalReport,
    KneeResult,
    SweepCurve,
    ari,
    cluster_stats,
    error_correlation,
    k_sweep,
    kneedle,
    nmi,
    per_flow_rmse,
    rmse,
    rmse_physical,
)
from .pipeline import RunConfig, compare, run_pipeline, sweep, validate_config
from .predict import (
    GruConfig,
    GruModel,
    TrainReport,
    gru_forward,
    load_model,
    predict_tm,
    save_model,
    train,
    train_partitioned,
)
from .represent import (
    AcfRep,
    DissimilarityMatrix,
    HistogramRep,
    PsdRep,
    ReprMatrix,
    acf_rep,
    build_features,
    default_lags,
    histogram_rep,
    jsd,
    pairwise_dissimilarity,
    psd_rep,
)
from .synth import GroupSpec, SynthSpec, generate
