"""Per-row retrieval scores for a prior embedding dataset.

Four scoring rules share one output contract: higher score means more
retrievable.

``nn_l2``
    Negated squared distance to the nearest target row, so thresholding at
    ``-zeta`` reproduces the classic "distance below zeta" selection.
``lse``
    Temperature-smoothed soft maximum of the negated squared distances,
    ``(1/h^2) * log(sum_j exp(-||p - t_j||^2 / h^2))``. As the temperature
    shrinks this ranking collapses onto ``nn_l2``.
``kde_target``
    Log-density of the prior row under a Gaussian KDE of the target data.
``iwr``
    Log importance weight: target KDE log-density minus the log of the
    averaged density over a set of KDEs fit on random prior batches.

Scoring is embarrassingly parallel across prior rows; worker threads only
split the fixed row chunks, so results are identical for any thread count.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._validation import check_count, check_positive, check_vector
from .dataset import EmbeddingDataset, content_id, read_vector_file, write_vector_file
from .errors import ValidationError
from .kde import BandwidthSpec, GaussianKde, log_mean_exp, scott_bandwidth
from ._version import __version__

# Rows handed to each scoring job; fixed so outputs never depend on the
# thread count. Inner kernel-matrix chunking is handled by GaussianKde.
_OUTER_CHUNK_ROWS = 8192
_PAIR_CHUNK_ELEMS = 1 << 21


class ScoreMethod(str, Enum):
    NN_L2 = "nn_l2"
    LSE = "lse"
    KDE_TARGET = "kde_target"
    IWR = "iwr"


_LOG_SPACE_METHODS = frozenset({ScoreMethod.KDE_TARGET, ScoreMethod.IWR})


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Per-prior-row scores plus the provenance needed to reproduce them."""

    values: np.ndarray
    method: ScoreMethod
    config_fingerprint: str
    prior_source_id: str = ""
    target_source_id: str = ""

    def __post_init__(self):
        values = check_vector(self.values, "scores")
        method = ScoreMethod(self.method)
        if method is ScoreMethod.NN_L2 and values.size and values.max() > 0.0:
            raise ValidationError(
                "nn_l2 scores are negated squared distances and must be <= 0",
                code="bad_scores",
            )
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "method", method)

    @property
    def log_space(self) -> bool:
        """True for methods whose scores are log-densities or log-ratios."""
        return self.method in _LOG_SPACE_METHODS

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PriorBatchSpec:
    """How to subsample the prior when one KDE cannot hold all of it."""

    batch_size: int
    num_batches: int = 8
    rng_seed: int = field(kw_only=True)

    def __post_init__(self):
        check_count(self.batch_size, "batch_size", minimum=2)
        check_count(self.num_batches, "num_batches", minimum=1)
        int(self.rng_seed)


def default_batch_spec(n_prior: int, rng_seed: int) -> PriorBatchSpec:
    """Default batching: up to 4096 rows per batch, 8 batches."""
    return PriorBatchSpec(min(4096, int(n_prior)), rng_seed=rng_seed)


def scott_bandwidth_for(dataset, bandwidth: BandwidthSpec | None = None) -> float:
    """Scott-rule bandwidth a dataset would get under ``bandwidth``."""
    ds = _as_dataset(dataset)
    spec = bandwidth or BandwidthSpec()
    return scott_bandwidth(spec.scale_c, ds.rows, ds.dim)


def config_fingerprint(**payload) -> str:
    """Deterministic 16-hex-digit hash of a configuration payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _kde_identity(kde: GaussianKde) -> dict:
    return {
        "support": content_id(kde.support_),
        "bandwidth": kde.bandwidth_,
        "scale_c": kde.scale_c,
    }


def nn_fingerprint(target: EmbeddingDataset, prior: EmbeddingDataset) -> str:
    return config_fingerprint(
        method=ScoreMethod.NN_L2.value,
        target=target.source_id,
        prior=prior.source_id,
    )


def lse_fingerprint(
    target: EmbeddingDataset, prior: EmbeddingDataset, temperature: float
) -> str:
    return config_fingerprint(
        method=ScoreMethod.LSE.value,
        temperature=temperature,
        target=target.source_id,
        prior=prior.source_id,
    )


def kde_target_fingerprint(target_kde: GaussianKde, prior: EmbeddingDataset) -> str:
    return config_fingerprint(
        method=ScoreMethod.KDE_TARGET.value,
        target=_kde_identity(target_kde),
        prior=prior.source_id,
    )


def iwr_fingerprint(
    target_kde: GaussianKde,
    prior_kdes: Sequence[GaussianKde],
    prior: EmbeddingDataset,
    leave_self_out: bool = False,
) -> str:
    return config_fingerprint(
        method=ScoreMethod.IWR.value,
        target=_kde_identity(target_kde),
        prior=prior.source_id,
        prior_batches=[_kde_identity(k) for k in prior_kdes],
        leave_self_out=leave_self_out,
    )


def _as_dataset(x) -> EmbeddingDataset:
    return x if isinstance(x, EmbeddingDataset) else EmbeddingDataset(np.asarray(x))


def _check_dims(target_dim: int, prior: EmbeddingDataset) -> None:
    if target_dim != prior.dim:
        raise ValidationError(
            f"target dim {target_dim} does not match prior dim {prior.dim}",
            code="dim_mismatch",
        )


def _map_row_chunks(n_rows: int, job, threads: Optional[int]) -> np.ndarray:
    slices = [
        slice(s, min(s + _OUTER_CHUNK_ROWS, n_rows))
        for s in range(0, n_rows, _OUTER_CHUNK_ROWS)
    ]
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(slices) == 1:
        parts = [job(sl) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, slices))
    return np.concatenate(parts)


def _pairwise_sq_dists(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Exact squared distances via direct differences (no cross-term trick)."""
    diff = queries[:, None, :] - targets[None, :, :]
    np.square(diff, out=diff)
    return diff.sum(axis=2)


def _pair_chunk_rows(n_targets: int, dim: int) -> int:
    return max(1, _PAIR_CHUNK_ELEMS // max(n_targets * dim, 1))


# -- scoring rules ----------------------------------------------------------


def score_nn_l2(target, prior, *, threads: int | None = 1) -> ScoreVector:
    """Negated squared distance from each prior row to its nearest target row."""
    target = _as_dataset(target)
    prior = _as_dataset(prior)
    _check_dims(target.dim, prior)
    t = target.data
    step = _pair_chunk_rows(t.shape[0], t.shape[1])

    def job(sl):
        q = prior.data[sl]
        out = np.empty(q.shape[0])
        for s in range(0, q.shape[0], step):
            block = slice(s, min(s + step, q.shape[0]))
            out[block] = _pairwise_sq_dists(q[block], t).min(axis=1)
        return out

    values = -_map_row_chunks(prior.rows, job, threads)
    fingerprint = nn_fingerprint(target, prior)
    return ScoreVector(
        values,
        ScoreMethod.NN_L2,
        fingerprint,
        prior_source_id=prior.source_id,
        target_source_id=target.source_id,
    )


def score_lse(
    target,
    prior,
    temperature_h: float | None = None,
    *,
    bandwidth: BandwidthSpec | None = None,
    threads: int | None = 1,
) -> ScoreVector:
    """Soft-maximum score ``(1/h^2) * log(sum_j exp(-||p - t_j||^2 / h^2))``.

    When ``temperature_h`` is omitted it defaults to the Scott-rule
    bandwidth of the target dataset (using ``bandwidth``, default scale 4),
    which keeps the smoothing comparable to the target KDE.
    """
    target = _as_dataset(target)
    prior = _as_dataset(prior)
    _check_dims(target.dim, prior)
    if temperature_h is None:
        spec = bandwidth or BandwidthSpec()
        temperature_h = scott_bandwidth(spec.scale_c, target.rows, target.dim)
    temperature_h = check_positive(temperature_h, "temperature_h")
    inv_h2 = 1.0 / (temperature_h * temperature_h)
    t = target.data
    step = _pair_chunk_rows(t.shape[0], t.shape[1])

    def job(sl):
        q = prior.data[sl]
        out = np.empty(q.shape[0])
        for s in range(0, q.shape[0], step):
            block = slice(s, min(s + step, q.shape[0]))
            expo = _pairwise_sq_dists(q[block], t)
            expo *= -inv_h2
            peak = expo.max(axis=1)
            np.subtract(expo, peak[:, None], out=expo)
            np.exp(expo, out=expo)
            out[block] = inv_h2 * (peak + np.log(expo.sum(axis=1)))
        return out

    values = _map_row_chunks(prior.rows, job, threads)
    fingerprint = lse_fingerprint(target, prior, temperature_h)
    return ScoreVector(
        values,
        ScoreMethod.LSE,
        fingerprint,
        prior_source_id=prior.source_id,
        target_source_id=target.source_id,
    )


def score_kde_target(
    target_kde: GaussianKde, prior, *, threads: int | None = 1
) -> ScoreVector:
    """Log-density of each prior row under the fitted target KDE."""
    prior = _as_dataset(prior)
    _check_dims(target_kde.dim_, prior)

    values = _map_row_chunks(
        prior.rows, lambda sl: target_kde.score_samples(prior.data[sl]), threads
    )
    fingerprint = kde_target_fingerprint(target_kde, prior)
    return ScoreVector(
        values,
        ScoreMethod.KDE_TARGET,
        fingerprint,
        prior_source_id=prior.source_id,
    )


def fit_prior_batched(
    prior, spec: PriorBatchSpec, bandwidth: BandwidthSpec | None = None
) -> list[GaussianKde]:
    """Fit one KDE per random prior batch (uniform, without replacement).

    Batch index sets are drawn with a seeded generator and sorted ascending,
    so a batch covering the whole prior reproduces the plain full-prior fit
    exactly. Each fitted model carries its global row indices in
    ``support_row_ids_`` for optional leave-self-out scoring.
    """
    prior = _as_dataset(prior)
    bandwidth = bandwidth or BandwidthSpec()
    if spec.batch_size > prior.rows:
        raise ValidationError(
            f"batch_size {spec.batch_size} exceeds prior rows {prior.rows}",
            code="bad_batch_spec",
        )
    rng = np.random.default_rng(spec.rng_seed)
    kdes = []
    for _ in range(spec.num_batches):
        idx = np.sort(rng.choice(prior.rows, size=spec.batch_size, replace=False))
        kde = GaussianKde(scale_c=bandwidth.scale_c).fit(prior.data[idx])
        kde.support_row_ids_ = idx
        kdes.append(kde)
    return kdes


def _loo_log_density(
    kde: GaussianKde, queries: np.ndarray, self_cols: np.ndarray
) -> np.ndarray:
    """Log-density excluding each query's own kernel (mean over M-1 kernels)."""
    if kde.count_ < 2:
        raise ValidationError(
            "leave-self-out needs at least 2 kernels per batch", code="bad_batch_spec"
        )
    n = queries.shape[0]
    out = np.empty(n)
    step = max(1, _PAIR_CHUNK_ELEMS // kde.count_)
    for s in range(0, n, step):
        block = slice(s, min(s + step, n))
        expo = kde._sq_mahalanobis_chunk(queries[block])
        expo *= -0.5
        expo += kde.log_norm_
        expo[np.arange(expo.shape[0]), self_cols[block]] = -np.inf
        peak = expo.max(axis=1)
        np.subtract(expo, peak[:, None], out=expo)
        np.exp(expo, out=expo)
        out[block] = peak + np.log(expo.sum(axis=1)) - np.log(kde.count_ - 1)
    return out


def score_importance_weight(
    target_kde: GaussianKde,
    prior_kdes: Sequence[GaussianKde],
    prior,
    *,
    leave_self_out: bool = False,
    threads: int | None = 1,
) -> ScoreVector:
    """Log importance weight of each prior row.

    ``log p_target(z) - log p_prior(z)`` where the prior log-density is the
    log of the arithmetic mean of the batch KDE densities (a log-mean-exp
    over the per-batch log-densities). A monotone transform of the density
    ratio, so thresholding on it is equivalent to thresholding the ratio.

    With ``leave_self_out`` a prior row that belongs to a batch's support
    does not count its own kernel toward that batch's density.
    """
    prior = _as_dataset(prior)
    if not prior_kdes:
        raise ValidationError("prior_kdes must be non-empty", code="empty_batch_list")
    _check_dims(target_kde.dim_, prior)
    for kde in prior_kdes:
        _check_dims(kde.dim_, prior)
        if leave_self_out and getattr(kde, "support_row_ids_", None) is None:
            raise ValidationError(
                "leave_self_out requires batch KDEs fitted by fit_prior_batched "
                "(missing support row ids)",
                code="missing_row_ids",
            )

    def job(sl):
        q = prior.data[sl]
        log_t = target_kde.score_samples(q)
        log_p = np.empty((len(prior_kdes), q.shape[0]))
        for k, kde in enumerate(prior_kdes):
            log_p[k] = kde.score_samples(q)
            if leave_self_out:
                ids = kde.support_row_ids_
                lo, hi = np.searchsorted(ids, [sl.start, sl.stop])
                if hi > lo:
                    local = ids[lo:hi] - sl.start
                    log_p[k, local] = _loo_log_density(
                        kde, q[local], np.arange(lo, hi)
                    )
        return log_t - log_mean_exp(log_p, axis=0)

    values = _map_row_chunks(prior.rows, job, threads)
    fingerprint = iwr_fingerprint(target_kde, prior_kdes, prior, leave_self_out)
    return ScoreVector(
        values,
        ScoreMethod.IWR,
        fingerprint,
        prior_source_id=prior.source_id,
    )


# -- persistence --------------------------------------------------------------


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_scores(scores: ScoreVector, path, params: dict | None = None) -> None:
    """Write scores as a binary vector plus a JSON sidecar of provenance."""
    write_vector_file(scores.values[:, None], path)
    sidecar = {
        "engine_version": __version__,
        "method": scores.method.value,
        "config_fingerprint": scores.config_fingerprint,
        "log_space": scores.log_space,
        "prior_source_id": scores.prior_source_id,
        "target_source_id": scores.target_source_id,
        "params": params or {},
    }
    sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_scores(path) -> tuple[ScoreVector, dict]:
    """Read a score file and its sidecar back."""
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise ValidationError(
            f"missing score sidecar {meta_path}", code="missing_sidecar"
        )
    sidecar = json.loads(meta_path.read_text())
    values = read_vector_file(path)
    if values.shape[1] != 1:
        raise ValidationError(
            f"{path}: score files must have dim 1, got {values.shape[1]}",
            code="dim_mismatch",
        )
    scores = ScoreVector(
        values[:, 0],
        ScoreMethod(sidecar["method"]),
        sidecar["config_fingerprint"],
        prior_source_id=sidecar.get("prior_source_id", ""),
        target_source_id=sidecar.get("target_source_id", ""),
    )
    return scores, sidecar
