"""Frame- and video-level AUC, score aggregation, policy-evolution tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataIntegrityError, MetricUndefinedError


@dataclass(frozen=True)
class ScoredItem:
    """One scored sample; video-level rows use frame_index = -1."""

    score: float
    label: int
    video_id: str
    frame_index: int

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be finite in [0, 1], got {self.score!r}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def auc(items: Sequence[ScoredItem]) -> float:
    """Area under the ROC curve, Mann-Whitney formulation.

    Computed with average ranks plus tie correction, which equals
    (#concordant + 0.5 * #tied) / (#pos * #neg) exactly; ties between a
    positive and a negative therefore count half.
    """
    scores = np.array([it.score for it in items], dtype=np.float64)
    labels = np.array([it.label for it in items])
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def video_level_scores(items: Sequence[ScoredItem]) -> list[ScoredItem]:
    """Collapse frame scores to one item per video by arithmetic mean.

    All frames of a video must share a label; mixed labels indicate a
    corrupt corpus and raise ``DataIntegrityError``.  Videos appear in
    first-seen order.
    """
    if not items:
        raise MetricUndefinedError("no scored items")
    order: list[str] = []
    scores: dict[str, list[float]] = {}
    labels: dict[str, int] = {}
    for it in items:
        if it.video_id not in scores:
            order.append(it.video_id)
            scores[it.video_id] = []
            labels[it.video_id] = it.label
        elif labels[it.video_id] != it.label:
            raise DataIntegrityError(f"video {it.video_id!r} mixes labels")
        scores[it.video_id].append(it.score)
    return [
        ScoredItem(float(np.mean(scores[v])), labels[v], v, -1)
        for v in order
    ]


def policy_evolution(logs) -> np.ndarray:
    """Epoch-by-operator table of the epoch-averaged policies, verbatim.

    Returns an (E, 4) array with columns (epoch, p_bi, p_sbi, p_ssbi).
    """
    if not logs:
        raise MetricUndefinedError("no epoch logs")
    rows = np.zeros((len(logs), 4))
    for i, log in enumerate(logs):
        rows[i, 0] = log.epoch
        rows[i, 1:] = np.asarray(log.policy, dtype=np.float64)
    return rows


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Plain CSV with repr-precision floats; locale-independent by design."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(c) for c in row) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)
