"""Retrieval-distribution diagnostics.

Summarizes a retrieval manifest against row metadata: how the selection
spreads over tasks (with user-supplied relevant/mixed/harmful labels) and
over within-episode time, binned proportionally so episodes of different
lengths are comparable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ._validation import check_count
from .dataset import RowMetadata
from .errors import ValidationError
from .retrieval import RetrievalManifest
from ._version import __version__

logger = logging.getLogger(__name__)

RELEVANCE_LEVELS = ("relevant", "mixed", "harmful")
UNLABELED_TASK = "(unlabeled)"


@dataclass(frozen=True)
class TaskBreakdown:
    """Selected-row counts and fractions per task, with relevance labels."""

    per_task_counts: dict
    per_task_fractions: dict
    relevance_labels: dict


@dataclass(frozen=True, eq=False)
class TimestepHistogram:
    """Selected-row counts per proportional within-episode time bin."""

    bin_count: int
    counts: np.ndarray
    normalized: np.ndarray


def _check_pairing(manifest: RetrievalManifest, meta: Sequence[RowMetadata]) -> None:
    if manifest.selected_indices[-1] >= len(meta):
        raise ValidationError(
            f"manifest selects row {int(manifest.selected_indices[-1])} but "
            f"metadata has only {len(meta)} rows",
            code="metadata_mismatch",
        )


def task_breakdown(
    manifest: RetrievalManifest,
    meta: Sequence[RowMetadata],
    labels: Mapping[str, str],
) -> TaskBreakdown:
    """Count selected rows per task and attach relevance labels.

    Tasks selected but missing from ``labels`` default to ``harmful`` with a
    logged warning. Rows without a task label group under
    ``"(unlabeled)"``; a selection with no labeled rows at all yields an
    empty breakdown.
    """
    _check_pairing(manifest, meta)
    for task, level in labels.items():
        if level not in RELEVANCE_LEVELS:
            raise ValidationError(
                f"unknown relevance {level!r} for task {task!r}",
                code="bad_relevance",
            )
    counts: dict[str, int] = {}
    any_labeled = False
    for i in manifest.selected_indices:
        task = meta[i].task_label
        if task is not None:
            any_labeled = True
        key = task if task is not None else UNLABELED_TASK
        counts[key] = counts.get(key, 0) + 1
    if not any_labeled:
        return TaskBreakdown({}, {}, {})
    total = manifest.size
    fractions = {task: c / total for task, c in counts.items()}
    relevance = {}
    for task in counts:
        if task in labels:
            relevance[task] = labels[task]
        else:
            logger.warning(
                "task %r has no relevance label; defaulting to 'harmful'", task
            )
            relevance[task] = "harmful"
    return TaskBreakdown(counts, fractions, relevance)


def timestep_histogram(
    manifest: RetrievalManifest,
    meta: Sequence[RowMetadata],
    bin_count: int = 10,
) -> TimestepHistogram:
    """Histogram selected rows by proportional position within their episode.

    Bin assignment is ``floor(step_index * bin_count / episode_length)``,
    always in ``[0, bin_count)``.
    """
    bin_count = check_count(bin_count, "bin_count")
    _check_pairing(manifest, meta)
    bins = np.empty(manifest.size, dtype=np.int64)
    for pos, i in enumerate(manifest.selected_indices):
        rec = meta[i]
        bins[pos] = (rec.step_index * bin_count) // rec.episode_length
    counts = np.bincount(bins, minlength=bin_count)
    return TimestepHistogram(bin_count, counts, counts / manifest.size)


def task_bin_counts(
    manifest: RetrievalManifest,
    meta: Sequence[RowMetadata],
    bin_count: int = 10,
) -> dict:
    """Crossed per-task, per-bin selected counts.

    Lets external tooling apply segment-level relevance rules (e.g. "only
    the early portion of this task is useful") that neither marginal table
    can express.
    """
    bin_count = check_count(bin_count, "bin_count")
    _check_pairing(manifest, meta)
    table: dict[str, list] = {}
    for i in manifest.selected_indices:
        rec = meta[i]
        key = rec.task_label if rec.task_label is not None else UNLABELED_TASK
        row = table.setdefault(key, [0] * bin_count)
        row[(rec.step_index * bin_count) // rec.episode_length] += 1
    return table


def emit_report(
    breakdown: TaskBreakdown,
    histogram: TimestepHistogram,
    path,
    *,
    fingerprint: str = "",
    method: str = "",
    evaluation: Optional[dict] = None,
    task_bins: Optional[dict] = None,
) -> None:
    """Write the diagnostics report as stable, sectioned JSON.

    Schema: ``engine_version``, ``config_fingerprint``, ``method``, a
    ``tasks`` section (null when no rows carry task labels) with
    ``counts`` / ``fractions`` / ``relevance`` keyed by task, a
    ``timesteps`` section with ``bin_count`` / ``counts`` / ``normalized``,
    an optional crossed ``task_timesteps`` table, and an optional
    ``evaluation`` section (e.g. precision/recall against ground truth).
    """
    tasks_section = None
    if breakdown.per_task_counts:
        tasks_section = {
            "counts": dict(sorted(breakdown.per_task_counts.items())),
            "fractions": dict(sorted(breakdown.per_task_fractions.items())),
            "relevance": dict(sorted(breakdown.relevance_labels.items())),
        }
    payload = {
        "engine_version": __version__,
        "config_fingerprint": fingerprint,
        "method": method,
        "tasks": tasks_section,
        "timesteps": {
            "bin_count": histogram.bin_count,
            "counts": [int(c) for c in histogram.counts],
            "normalized": [float(f) for f in histogram.normalized],
        },
        "task_timesteps": (
            None if task_bins is None else dict(sorted(task_bins.items()))
        ),
        "evaluation": evaluation,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_report(path) -> dict:
    """Parse an emitted report back into a dict (exact float round-trip)."""
    return json.loads(Path(path).read_text())
