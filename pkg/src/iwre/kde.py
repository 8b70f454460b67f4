"""Multivariate Gaussian kernel density estimation.

A fitted model places one Gaussian kernel, with covariance ``h^2 * Sigma``,
at every support row. ``h`` comes from a scaled Scott rule and ``Sigma`` is
the (ridge-regularized) sample covariance of the support. All density
arithmetic stays in log space: queries are whitened through the Cholesky
factor of ``h^2 * Sigma`` so kernel exponents reduce to squared Euclidean
norms, and the kernel sum is a log-sum-exp.

Determinism contract: per-query kernel sums always reduce over the full
support in ascending index order with a fixed chunking scheme, so identical
inputs produce bit-identical log-densities no matter how callers chunk or
parallelize across queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._validation import ParamsMixin, check_count, check_matrix, check_positive
from .errors import NumericalError, ValidationError

LOG_2PI = float(np.log(2.0 * np.pi))

# Ridge schedule: eps starts tiny and doubles until the Cholesky succeeds.
RIDGE_EPS_INITIAL = 1e-9
RIDGE_EPS_MAX = 1e-3

# Query chunks are sized so the (rows x support) kernel matrix stays near
# this element count; the value only bounds memory, never results.
_CHUNK_TARGET_ELEMS = 1 << 21
_CHUNK_MAX_ROWS = 4096


@dataclass(frozen=True)
class BandwidthSpec:
    """Scott-rule bandwidth with a multiplicative scale factor."""

    scale_c: float = 4.0

    def __post_init__(self):
        check_positive(self.scale_c, "scale_c")


def scott_bandwidth(scale_c: float, count: int, dim: int) -> float:
    """Rule-of-thumb bandwidth ``scale_c * count ** (-1 / (dim + 4))``."""
    scale_c = check_positive(scale_c, "scale_c")
    count = check_count(count, "count")
    dim = check_count(dim, "dim")
    return scale_c * float(count) ** (-1.0 / (dim + 4))


def sample_covariance(x) -> np.ndarray:
    """Unbiased sample covariance (divisor N-1); identity for a single row."""
    x = check_matrix(x, "x")
    n, d = x.shape
    if n == 1:
        return np.eye(d)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2.0


class GaussianKde(ParamsMixin):
    """Gaussian kernel density model with one kernel per support row.

    Parameters
    ----------
    scale_c : float
        Multiplier on the Scott-rule bandwidth ``count ** (-1/(dim+4))``.

    Attributes (set by :meth:`fit` or :meth:`from_parameters`)
    ----------
    support_ : (M, d) ndarray
        Kernel centers.
    bandwidth_ : float
        Bandwidth multiplier ``h``.
    covariance_ : (d, d) ndarray
        Regularized kernel covariance ``Sigma`` (before the ``h^2`` scaling).
    chol_lower_ : (d, d) ndarray
        Lower Cholesky factor of ``h^2 * Sigma``.
    log_norm_ : float
        Log of the per-kernel Gaussian normalizer,
        ``-sum(log(diag(chol_lower_))) - (d/2) * log(2*pi)``.
    count_ : int
        Number of kernels M.
    """

    def __init__(self, scale_c: float | None = 4.0):
        self.scale_c = scale_c

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y=None) -> "GaussianKde":
        """Fit bandwidth, covariance and Cholesky factor to the support X."""
        X = check_matrix(X, "X")
        h = scott_bandwidth(self.scale_c, X.shape[0], X.shape[1])
        self._finalize(X, h, sample_covariance(X), always_ridge=True)
        return self

    @classmethod
    def from_parameters(cls, support, bandwidth_h, covariance) -> "GaussianKde":
        """Build a model directly from centers, bandwidth and covariance.

        The covariance is used as given when it is positive definite; the
        ridge schedule only kicks in if its Cholesky fails.
        """
        support = check_matrix(support, "support")
        bandwidth_h = check_positive(bandwidth_h, "bandwidth_h")
        covariance = np.asarray(covariance, dtype=np.float64)
        d = support.shape[1]
        if covariance.shape != (d, d):
            raise ValidationError(
                f"covariance shape {covariance.shape} does not match dim {d}",
                code="dim_mismatch",
            )
        model = cls(scale_c=None)
        model._finalize(support, bandwidth_h, covariance, always_ridge=False)
        return model

    def _finalize(self, support, h, cov, *, always_ridge):
        d = support.shape[1]
        cov = (cov + cov.T) / 2.0
        trace_scale = float(np.trace(cov)) / d
        if trace_scale <= 0.0:
            trace_scale = 1.0
        eye = np.eye(d)

        eps = RIDGE_EPS_INITIAL if always_ridge else 0.0
        while True:
            regularized = cov + (eps * trace_scale) * eye if eps else cov
            try:
                chol = np.linalg.cholesky((h * h) * regularized)
                break
            except np.linalg.LinAlgError:
                eps = RIDGE_EPS_INITIAL if eps == 0.0 else eps * 2.0
                if eps > RIDGE_EPS_MAX:
                    raise NumericalError(
                        "Cholesky factorization failed after maximum ridge "
                        f"regularization (eps > {RIDGE_EPS_MAX:g}); input scale "
                        "is pathological",
                        code="cholesky_exhausted",
                    )

        support = support.copy()
        support.flags.writeable = False
        self.support_ = support
        self.bandwidth_ = float(h)
        self.covariance_ = regularized
        self.chol_lower_ = chol
        self.log_norm_ = float(-np.sum(np.log(np.diag(chol))) - 0.5 * d * LOG_2PI)
        self.count_ = support.shape[0]
        self.dim_ = d
        # Whitened support, centered on the support mean so that kernel
        # exponents are computed in well-conditioned local coordinates and
        # jointly translated inputs whiten to identical values.
        self._center = support.mean(axis=0)
        white = solve_triangular(chol, (support - self._center).T, lower=True).T
        self._white_support = np.ascontiguousarray(white)
        self._white_sq = np.einsum("ij,ij->i", white, white)
        return self

    # -- queries -----------------------------------------------------------

    @property
    def _chunk_rows(self) -> int:
        return max(1, min(_CHUNK_MAX_ROWS, _CHUNK_TARGET_ELEMS // max(self.count_, 1)))

    def _check_queries(self, X) -> np.ndarray:
        X = check_matrix(X, "queries")
        if X.shape[1] != self.dim_:
            raise ValidationError(
                f"query dim {X.shape[1]} does not match model dim {self.dim_}",
                code="dim_mismatch",
            )
        return X

    def _whiten(self, q: np.ndarray) -> np.ndarray:
        return solve_triangular(self.chol_lower_, (q - self._center).T, lower=True).T

    def _sq_mahalanobis_chunk(self, q: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distances (rows of q) x (support)."""
        w = self._whiten(q)
        sq = -2.0 * (w @ self._white_support.T)
        sq += np.einsum("ij,ij->i", w, w)[:, None]
        sq += self._white_sq[None, :]
        np.maximum(sq, 0.0, out=sq)
        return sq

    def _log_density_chunk(self, q: np.ndarray) -> np.ndarray:
        expo = self._sq_mahalanobis_chunk(q)
        expo *= -0.5
        peak = expo.max(axis=1)
        np.subtract(expo, peak[:, None], out=expo)
        np.exp(expo, out=expo)
        return self.log_norm_ + peak + np.log(expo.sum(axis=1)) - np.log(self.count_)

    def score_samples(self, X) -> np.ndarray:
        """Log-density of the kernel mixture at each query row.

        Computed with the log-sum-exp trick; finite for all finite queries
        (the largest kernel exponent always survives).
        """
        X = self._check_queries(X)
        n = X.shape[0]
        out = np.empty(n)
        step = self._chunk_rows
        for start in range(0, n, step):
            sl = slice(start, min(start + step, n))
            out[sl] = self._log_density_chunk(X[sl])
        return out

    def mahalanobis_sq(self, x, center_index: int) -> float:
        """Squared Mahalanobis distance from ``x`` to one kernel center.

        Measured under the kernel covariance ``h^2 * Sigma`` via a
        triangular solve against the stored Cholesky factor.
        """
        if not 0 <= center_index < self.count_:
            raise ValidationError(
                f"center_index {center_index} outside [0, {self.count_})",
                code="index_out_of_range",
            )
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim_:
            raise ValidationError(
                f"query dim {x.shape[0]} does not match model dim {self.dim_}",
                code="dim_mismatch",
            )
        delta = x - self.support_[center_index]
        y = solve_triangular(self.chol_lower_, delta, lower=True)
        return float(max(y @ y, 0.0))


def fit_kde(dataset, spec: BandwidthSpec | None = None) -> GaussianKde:
    """Fit a :class:`GaussianKde` to an embedding dataset (or raw matrix)."""
    spec = spec or BandwidthSpec()
    data = getattr(dataset, "data", dataset)
    return GaussianKde(scale_c=spec.scale_c).fit(data)


def log_mean_exp(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Stable ``log(mean(exp(values)))`` along ``axis``.

    Exact identity when the axis has length one, which keeps single-batch
    density averages bit-identical to the underlying log-density.
    """
    values = np.asarray(values, dtype=np.float64)
    k = values.shape[axis]
    peak = values.max(axis=axis)
    if k == 1:
        return peak
    shifted = values - np.expand_dims(peak, axis)
    return peak + np.log(np.exp(shifted).sum(axis=axis)) - np.log(k)
