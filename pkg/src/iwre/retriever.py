"""sklearn-style facade over the scoring and selection pipeline.

``EmbeddingRetriever`` composes with the wider estimator ecosystem:
``fit`` on the target embedding matrix, ``score_samples`` on a prior
matrix, ``transform`` to get back the selected prior rows. The functional
modules (:mod:`iwre.scoring`, :mod:`iwre.retrieval`) remain the primitive
API; this class just wires them behind fit/transform semantics.
"""

from __future__ import annotations

import numpy as np

from ._validation import ParamsMixin
from .dataset import EmbeddingDataset
from .errors import ValidationError
from .kde import BandwidthSpec, fit_kde
from .retrieval import select_by_fraction
from .scoring import (
    PriorBatchSpec,
    ScoreMethod,
    ScoreVector,
    default_batch_spec,
    fit_prior_batched,
    score_importance_weight,
    score_kde_target,
    score_lse,
    score_nn_l2,
)


class EmbeddingRetriever(ParamsMixin):
    """Score a prior embedding matrix against fitted target data, select rows.

    Parameters
    ----------
    method : {"nn_l2", "lse", "kde_target", "iwr"}
        Scoring rule.
    fraction : float
        Fraction of prior rows kept by :meth:`transform`.
    scale_c : float
        Scott-rule bandwidth multiplier for density-based methods.
    temperature : float or None
        Soft-max temperature for ``lse``; defaults to the target's Scott
        bandwidth.
    batch_size, num_batches, seed : int
        Prior batching for ``iwr``; ``batch_size=None`` means
        ``min(4096, n_prior)``. For ``iwr``, prior batch KDEs are fit on
        the matrix passed to :meth:`score_samples` / :meth:`transform`.
    leave_self_out : bool
        Exclude a prior row's own kernel from its batch density.
    threads : int or None
        Worker threads for scoring; ``None`` uses all cores.
    """

    def __init__(
        self,
        method: str = "iwr",
        fraction: float = 0.3,
        scale_c: float = 4.0,
        temperature: float | None = None,
        batch_size: int | None = None,
        num_batches: int = 8,
        seed: int = 0,
        leave_self_out: bool = False,
        threads: int | None = 1,
    ):
        self.method = method
        self.fraction = fraction
        self.scale_c = scale_c
        self.temperature = temperature
        self.batch_size = batch_size
        self.num_batches = num_batches
        self.seed = seed
        self.leave_self_out = leave_self_out
        self.threads = threads

    def fit(self, X, y=None) -> "EmbeddingRetriever":
        """Store the target data and fit the target KDE when needed."""
        method = ScoreMethod(self.method)
        self.target_ = X if isinstance(X, EmbeddingDataset) else EmbeddingDataset(
            np.asarray(X)
        )
        self.target_kde_ = None
        if method in (ScoreMethod.KDE_TARGET, ScoreMethod.IWR):
            self.target_kde_ = fit_kde(self.target_, BandwidthSpec(self.scale_c))
        return self

    def _check_fitted(self):
        if not hasattr(self, "target_"):
            raise ValidationError("retriever is not fitted", code="not_fitted")

    def score_vector(self, X) -> ScoreVector:
        """Full :class:`ScoreVector` (with provenance) for a prior matrix."""
        self._check_fitted()
        method = ScoreMethod(self.method)
        prior = X if isinstance(X, EmbeddingDataset) else EmbeddingDataset(
            np.asarray(X)
        )
        if method is ScoreMethod.NN_L2:
            return score_nn_l2(self.target_, prior, threads=self.threads)
        if method is ScoreMethod.LSE:
            return score_lse(
                self.target_,
                prior,
                self.temperature,
                bandwidth=BandwidthSpec(self.scale_c),
                threads=self.threads,
            )
        if method is ScoreMethod.KDE_TARGET:
            return score_kde_target(self.target_kde_, prior, threads=self.threads)
        batch = (
            self.batch_size
            if self.batch_size is not None
            else default_batch_spec(prior.rows, self.seed).batch_size
        )
        spec = PriorBatchSpec(batch, self.num_batches, rng_seed=self.seed)
        prior_kdes = fit_prior_batched(prior, spec, BandwidthSpec(self.scale_c))
        return score_importance_weight(
            self.target_kde_,
            prior_kdes,
            prior,
            leave_self_out=self.leave_self_out,
            threads=self.threads,
        )

    def score_samples(self, X) -> np.ndarray:
        """Per-row retrieval scores (higher = more retrievable)."""
        return self.score_vector(X).values

    def transform(self, X) -> np.ndarray:
        """Return the top-``fraction`` rows of ``X`` by retrieval score.

        The selection manifest is kept on ``manifest_`` for inspection.
        """
        scores = self.score_vector(X)
        self.manifest_ = select_by_fraction(scores, self.fraction)
        data = X.data if isinstance(X, EmbeddingDataset) else np.asarray(X)
        return data[self.manifest_.selected_indices]
