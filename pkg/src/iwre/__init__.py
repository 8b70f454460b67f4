"""Importance-weighted retrieval engine for embedding datasets.

Scores every row of a large prior embedding dataset against a small target
dataset — by nearest-neighbor distance, a soft-max relaxation, target KDE
density, or the full KDE importance weight — and selects the top-weighted
subset for co-training.
"""

from ._version import __version__
from .analysis import (
    TaskBreakdown,
    TimestepHistogram,
    emit_report,
    load_report,
    task_bin_counts,
    task_breakdown,
    timestep_histogram,
)
from .dataset import (
    EmbeddingDataset,
    RowMetadata,
    load_embeddings,
    load_metadata,
    pair_metadata,
    save_embeddings,
    save_metadata,
)
from .errors import EngineError, NumericalError, ValidationError
from .kde import (
    BandwidthSpec,
    GaussianKde,
    fit_kde,
    log_mean_exp,
    sample_covariance,
    scott_bandwidth,
)
from .retrieval import (
    CotrainWeights,
    RetrievalManifest,
    SelectionRule,
    cotrain_weights,
    load_manifest,
    materialize,
    resample_by_weight,
    save_cotrain_weights,
    save_manifest,
    select_by_fraction,
    select_by_threshold,
)
from .retriever import EmbeddingRetriever
from .scoring import (
    PriorBatchSpec,
    ScoreMethod,
    ScoreVector,
    config_fingerprint,
    default_batch_spec,
    fit_prior_batched,
    load_scores,
    save_scores,
    score_importance_weight,
    score_kde_target,
    score_lse,
    score_nn_l2,
)
from .synthbench import (
    GaussianMixture,
    OracleDensities,
    RetrievalQuality,
    SyntheticData,
    SyntheticScenario,
    WeightCheckResult,
    evaluate_retrieval,
    generate,
    load_oracle,
    make_scenario,
    oracle_weight_check,
    row_relevance,
)

__all__ = [
    "__version__",
    "BandwidthSpec",
    "CotrainWeights",
    "EmbeddingDataset",
    "EmbeddingRetriever",
    "EngineError",
    "GaussianKde",
    "GaussianMixture",
    "NumericalError",
    "OracleDensities",
    "PriorBatchSpec",
    "RetrievalManifest",
    "RetrievalQuality",
    "RowMetadata",
    "ScoreMethod",
    "ScoreVector",
    "SelectionRule",
    "SyntheticData",
    "SyntheticScenario",
    "TaskBreakdown",
    "TimestepHistogram",
    "ValidationError",
    "WeightCheckResult",
    "config_fingerprint",
    "cotrain_weights",
    "default_batch_spec",
    "emit_report",
    "evaluate_retrieval",
    "fit_kde",
    "fit_prior_batched",
    "generate",
    "load_embeddings",
    "load_manifest",
    "load_metadata",
    "load_oracle",
    "load_report",
    "load_scores",
    "log_mean_exp",
    "make_scenario",
    "materialize",
    "oracle_weight_check",
    "pair_metadata",
    "resample_by_weight",
    "row_relevance",
    "sample_covariance",
    "save_cotrain_weights",
    "save_embeddings",
    "save_manifest",
    "save_metadata",
    "save_scores",
    "score_importance_weight",
    "score_kde_target",
    "score_lse",
    "score_nn_l2",
    "scott_bandwidth",
    "select_by_fraction",
    "select_by_threshold",
    "task_bin_counts",
    "task_breakdown",
    "timestep_histogram",
]
