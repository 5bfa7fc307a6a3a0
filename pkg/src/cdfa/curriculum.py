"""Monotonic curriculum: pseudo-fake schedule, batch plans, batch assembly.

The schedule q(t) = sin(pi * t / (2T)) rises monotonically from 0 to 1 over
the training run and sets the fraction of the fake half of each batch that
is synthesized on the fly rather than drawn from the stored fakes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .augment import (
    LABEL_FAKE,
    LABEL_REAL,
    AugContext,
    AugOp,
    FaceFrame,
    apply_forgery_augmentation,
)
from .errors import ConfigError, InsufficientDataError

PolicySource = Callable[[FaceFrame], np.ndarray]


@dataclass(frozen=True)
class CurriculumSchedule:
    """Schedule over ``total_epochs`` epochs; epsilon is the derived 2T/pi."""

    total_epochs: int

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")

    @property
    def epsilon(self) -> float:
        return 2.0 * self.total_epochs / math.pi


def schedule_q(t: float, schedule: CurriculumSchedule) -> float:
    """Pseudo-fake fraction at epoch t: sin(t / epsilon) = sin(pi t / 2T)."""
    if not 0 <= t <= schedule.total_epochs:
        raise ValueError(f"epoch {t} outside [0, {schedule.total_epochs}]")
    return math.sin(t / schedule.epsilon)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class BatchPlan:
    """Per-batch composition: half real, fake half split o-fake / p-fake."""

    n_real: int
    n_ofake: int
    n_pfake: int
    batch_size: int

    def __post_init__(self):
        if min(self.n_real, self.n_ofake, self.n_pfake) < 0:
            raise ConfigError("batch plan counts must be >= 0")
        if self.n_real != self.batch_size // 2:
            raise ConfigError("n_real must equal batch_size / 2")
        if self.n_ofake + self.n_pfake != self.batch_size - self.n_real:
            raise ConfigError("fake half must sum to batch_size / 2")


def plan_batch(t: int, batch_size: int, schedule: CurriculumSchedule) -> BatchPlan:
    """Counts for epoch t: n_pfake = round_half_up(q(t) * b/2), rest o-fake."""
    if batch_size < 2 or batch_size % 2 != 0:
        raise ConfigError(f"batch size must be even and >= 2, got {batch_size}")
    half = batch_size // 2
    n_pfake = round_half_up(schedule_q(t, schedule) * half)
    n_pfake = min(n_pfake, half)
    return BatchPlan(n_real=half, n_ofake=half - n_pfake, n_pfake=n_pfake, batch_size=batch_size)


def fixed_plan(pfake_fraction: float, batch_size: int) -> BatchPlan:
    """Curriculum-free plan with a constant p-fake share of the fake half."""
    if not 0.0 <= pfake_fraction <= 1.0:
        raise ConfigError("pfake_fraction must lie in [0, 1]")
    if batch_size < 2 or batch_size % 2 != 0:
        raise ConfigError(f"batch size must be even and >= 2, got {batch_size}")
    half = batch_size // 2
    n_pfake = min(round_half_up(pfake_fraction * half), half)
    return BatchPlan(n_real=half, n_ofake=half - n_pfake, n_pfake=n_pfake, batch_size=batch_size)


@dataclass
class BatchItem:
    image: np.ndarray
    label: int
    provenance: str              # "real" | "ofake" | "pfake"
    video_id: str
    frame_index: int
    chosen_op: AugOp | None = None


@dataclass
class TrainingBatch:
    items: list[BatchItem]

    def __len__(self) -> int:
        return len(self.items)

    def images(self) -> np.ndarray:
        return np.stack([it.image for it in self.items])

    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.float64)


def compose_batch(
    plan: BatchPlan,
    real_pool: Sequence[FaceFrame],
    ofake_pool: Sequence[FaceFrame],
    policy_source: PolicySource,
    context: AugContext,
    rng: np.random.Generator,
) -> TrainingBatch:
    """Assemble one labeled batch following the plan.

    Real frames and p-fake sources are drawn from the real pool without
    replacement within the batch; each p-fake source is augmented under its
    own policy from ``policy_source``.  Item order is shuffled with the
    supplied stream, so the batch depends only on the seed.
    """
    n_from_real = plan.n_real + plan.n_pfake
    if len(real_pool) < n_from_real:
        raise InsufficientDataError(
            f"real pool has {len(real_pool)} frames, batch needs {n_from_real}"
        )
    if plan.n_ofake > 0 and len(ofake_pool) < plan.n_ofake:
        raise InsufficientDataError(
            f"o-fake pool has {len(ofake_pool)} frames, batch needs {plan.n_ofake}"
        )

    real_idx = rng.choice(len(real_pool), size=n_from_real, replace=False)
    items: list[BatchItem] = []
    for i in real_idx[: plan.n_real]:
        f = real_pool[int(i)]
        items.append(BatchItem(f.image, LABEL_REAL, "real", f.video_id, f.frame_index))
    if plan.n_ofake > 0:
        for i in rng.choice(len(ofake_pool), size=plan.n_ofake, replace=False):
            f = ofake_pool[int(i)]
            items.append(BatchItem(f.image, LABEL_FAKE, "ofake", f.video_id, f.frame_index))
    for i in real_idx[plan.n_real :]:
        f = real_pool[int(i)]
        pf = apply_forgery_augmentation(f, policy_source(f), context, rng)
        items.append(
            BatchItem(pf.image, LABEL_FAKE, "pfake", f.video_id, f.frame_index, chosen_op=pf.chosen_op)
        )

    order = rng.permutation(len(items))
    return TrainingBatch([items[int(i)] for i in order])
