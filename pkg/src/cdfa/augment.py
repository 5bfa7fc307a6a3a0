"""Forgery augmentation operators and policy-driven pseudo-fake generation.

Three operators produce the target face that gets blended back onto the
source frame through a landmark-derived mask:

* ``bi``   - target from a different identity with the closest landmarks;
* ``sbi``  - target is a photometrically perturbed copy of the source;
* ``ssbi`` - target is another frame of the same video, shifted in time.

``apply_forgery_augmentation`` samples one operator from a 3-way policy
vector and returns the blended result labeled fake.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InsufficientDataError,
    PolicySimplexError,
)
from .geometry import MaskParams, check_landmarks, make_blend_mask

Array = np.ndarray

LABEL_REAL = 0
LABEL_FAKE = 1


class AugOp(enum.Enum):
    """The three forgery operators; values match their branch order."""

    BI = 1
    SBI = 2
    SSBI = 3

    @property
    def index(self) -> int:
        return self.value - 1


OPS: tuple[AugOp, ...] = (AugOp.BI, AugOp.SBI, AugOp.SSBI)
OP_NAMES: tuple[str, ...] = tuple(op.name.lower() for op in OPS)


def op_from_name(name: str) -> AugOp:
    try:
        return AugOp[name.upper()]
    except KeyError:
        raise ValueError(f"unknown augmentation op {name!r}; expected one of {OP_NAMES}") from None


@dataclass
class FaceFrame:
    """One image with its 68-point landmarks and video provenance."""

    image: Array                 # (H, W, 3) float64 in [0, 1]
    landmarks: Array             # (68, 2) float64 (x, y)
    video_id: str
    frame_index: int

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DimensionMismatchError(f"expected (H, W, 3) image, got {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        h, w = self.image.shape[:2]
        self.landmarks = check_landmarks(self.landmarks, h, w)
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class PseudoFake:
    """A blended pseudo-fake sample; always labeled fake."""

    image: Array
    mask: Array
    chosen_op: AugOp
    label: int = LABEL_FAKE


@dataclass(frozen=True)
class SbiParams:
    """Ranges of the self-blend photometric perturbations.

    brightness: per-channel multiplicative scale drawn from [1-a, 1+a].
    shift: per-channel additive offset drawn from [-c, +c].
    resize: down/up resize factor drawn from [1-r, 1+r].
    """

    brightness: float = 0.3
    shift: float = 0.1
    resize: float = 0.05


@dataclass
class AugContext:
    """Read-only inputs the operators need beyond the source frame.

    real_frames backs the per-call candidate pools for the landmark-matching
    operator; videos maps video_id to the full ordered frame list for the
    time-shift operator.
    """

    real_frames: Sequence[FaceFrame]
    videos: Mapping[str, Sequence[FaceFrame]]
    mask_params: MaskParams = field(default_factory=MaskParams)
    sbi_params: SbiParams = field(default_factory=SbiParams)
    bi_pool_size: int = 100
    bi_color_transfer: bool = False


def check_policy(policy) -> Array:
    """Validate a 3-way probability vector; returns it as float64."""
    p = np.asarray(policy, dtype=np.float64)
    if p.shape != (3,):
        raise PolicySimplexError(f"policy must have shape (3,), got {p.shape}")
    if not np.isfinite(p).all() or (p < 0.0).any() or (p > 1.0).any():
        raise PolicySimplexError("policy entries must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise PolicySimplexError(f"policy entries sum to {p.sum()!r}, expected 1")
    return p


def sample_op(policy, rng: np.random.Generator) -> AugOp:
    """Draw one operator index from the policy by inverse-CDF sampling."""
    p = check_policy(policy)
    cdf = np.cumsum(p)
    u = rng.random()
    j = int(np.searchsorted(cdf, u, side="right"))
    j = min(j, 2)
    while p[j] == 0.0 and j > 0:  # guard against cumsum round-off
        j -= 1
    return OPS[j]


def blend(source_image: Array, target_image: Array, mask: Array) -> Array:
    """Per-pixel convex combination: target * M + source * (1 - M).

    The same single-channel mask is applied to every channel.  With M = 0
    the source is returned bit-exactly; with M = 1, the target.
    """
    src = np.asarray(source_image, dtype=np.float64)
    tgt = np.asarray(target_image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if src.shape != tgt.shape:
        raise DimensionMismatchError(f"source {src.shape} vs target {tgt.shape}")
    if m.shape != src.shape[:2]:
        raise DimensionMismatchError(f"mask {m.shape} vs image {src.shape[:2]}")
    m3 = m[:, :, None]
    return tgt * m3 + src * (1.0 - m3)


def landmark_distance(a: Array, b: Array) -> float:
    """Sum over the 68 points of the Euclidean point-to-point distance."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def op_bi(source: FaceFrame, candidate_pool: Sequence[FaceFrame]) -> FaceFrame:
    """Pool member with the smallest landmark distance to the source.

    Ties are broken by the lowest pool index.  Callers must ensure the pool
    excludes frames of the source's own video.
    """
    if len(candidate_pool) == 0:
        raise InsufficientDataError("BI candidate pool is empty")
    dists = np.array([landmark_distance(c.landmarks, source.landmarks) for c in candidate_pool])
    return candidate_pool[int(np.argmin(dists))]


def bilinear_resize(image: Array, out_h: int, out_w: int) -> Array:
    """Bilinear resample to (out_h, out_w) with pixel-center alignment.

    Downscaling applies a Gaussian anti-aliasing filter first, so shrinking
    never aliases high frequencies into fake detail.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    sig_y = 0.4 * (h / out_h) if out_h < h else 0.0
    sig_x = 0.4 * (w / out_w) if out_w < w else 0.0
    if sig_y > 0.0 or sig_x > 0.0:
        from scipy.ndimage import gaussian_filter

        sigma = (sig_y, sig_x) if img.ndim == 2 else (sig_y, sig_x, 0.0)
        img = gaussian_filter(img, sigma=sigma, mode="reflect")
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def op_sbi(source: FaceFrame, rng: np.random.Generator, params: SbiParams | None = None) -> FaceFrame:
    """Photometrically perturbed copy of the source frame.

    Applies a per-channel brightness scale, a per-channel additive shift,
    then a resize-and-restore pass; the result is clipped to [0, 1].  The
    landmarks are unchanged.  All-zero ranges reproduce the source exactly.
    """
    params = params or SbiParams()
    scale = rng.uniform(1.0 - params.brightness, 1.0 + params.brightness, size=3)
    shift = rng.uniform(-params.shift, params.shift, size=3)
    factor = float(rng.uniform(1.0 - params.resize, 1.0 + params.resize))
    img = source.image * scale + shift
    h, w = img.shape[:2]
    rh, rw = max(1, round(h * factor)), max(1, round(w * factor))
    if (rh, rw) != (h, w):
        img = bilinear_resize(bilinear_resize(img, rh, rw), h, w)
    img = np.clip(img, 0.0, 1.0)
    return FaceFrame(img, source.landmarks.copy(), source.video_id, source.frame_index)


def op_ssbi(source: FaceFrame, video: Sequence[FaceFrame], rng: np.random.Generator) -> FaceFrame:
    """Another frame of the same video, offset by 5..10 frames.

    The offset direction is drawn uniformly; the shifted index is clamped to
    the video range, and if clamping lands back on the source's own index the
    result steps to the nearest distinct valid index.  The returned frame
    keeps its own landmarks.
    """
    n = len(video)
    if n < 2:
        raise InsufficientDataError("time-shift blending needs a video with >= 2 frames")
    if not 0 <= source.frame_index < n:
        raise ValueError("source frame_index outside the supplied video")
    delta = int(rng.integers(5, 11))
    sign = 1 if int(rng.integers(2)) == 0 else -1
    idx = min(max(source.frame_index + sign * delta, 0), n - 1)
    if idx == source.frame_index:
        idx = source.frame_index + 1 if source.frame_index + 1 <= n - 1 else source.frame_index - 1
    return video[idx]


def _apply_color_transfer(target_image: Array, source_image: Array) -> Array:
    """Shift target channel means onto the source's (optional BI step)."""
    delta = source_image.mean(axis=(0, 1)) - target_image.mean(axis=(0, 1))
    return np.clip(target_image + delta, 0.0, 1.0)


def _bi_candidate_pool(source: FaceFrame, context: AugContext, rng: np.random.Generator) -> list[FaceFrame]:
    eligible = [f for f in context.real_frames if f.video_id != source.video_id]
    if not eligible:
        raise InsufficientDataError("no eligible BI candidates outside the source video")
    k = min(context.bi_pool_size, len(eligible))
    idx = rng.choice(len(eligible), size=k, replace=False)
    return [eligible[i] for i in idx]


def realize_operator(
    op: AugOp,
    source: FaceFrame,
    context: AugContext,
    rng: np.random.Generator,
) -> PseudoFake:
    """Run one operator end to end: target face, blend mask, blended image.

    The target draws and the mask draws come from the same stream in a fixed
    order, so a given (op, seed) pair is fully reproducible.  This is the
    shared path behind both hard sampling and the soft-mixture forward.
    """
    if op is AugOp.BI:
        pool = _bi_candidate_pool(source, context, rng)
        target = op_bi(source, pool).image
        if context.bi_color_transfer:
            target = _apply_color_transfer(target, source.image)
    elif op is AugOp.SBI:
        target = op_sbi(source, rng, context.sbi_params).image
    else:
        video = context.videos.get(source.video_id)
        if video is None:
            raise InsufficientDataError(f"video {source.video_id!r} not available for time-shift blending")
        target = op_ssbi(source, video, rng).image
    mask = make_blend_mask(source.landmarks, source.height, source.width, rng, context.mask_params)
    return PseudoFake(blend(source.image, target, mask), mask, op)


def operator_streams(rng: np.random.Generator) -> list[np.random.Generator]:
    """Derive one child stream per operator from the supplied stream.

    Both the hard sampling path and the soft-mixture path derive their
    operator randomness this way, so a one-hot policy collapses the soft
    mixture onto exactly the sample the hard path would produce.
    """
    seeds = rng.integers(0, 2**63 - 1, size=len(OPS))
    return [np.random.default_rng(int(s)) for s in seeds]


def apply_forgery_augmentation(
    source: FaceFrame,
    policy,
    context: AugContext,
    rng: np.random.Generator,
) -> PseudoFake:
    """Sample one operator from the policy and produce a pseudo-fake.

    Inputs are never mutated; the output image is freshly allocated.
    """
    p = check_policy(policy)
    streams = operator_streams(rng)
    op = sample_op(p, rng)
    return realize_operator(op, source, context, streams[op.index])
