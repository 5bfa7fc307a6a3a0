"""Landmark geometry: convex hulls, mask rasterization, deformation, blurring.

This module realizes the blending-mask pipeline used by the forgery
augmentation operators: take the convex hull of a 68-point landmark set,
jitter its vertices, rasterize it onto the pixel grid, soften it with a
Gaussian blur, and optionally scale its peak intensity.

Coordinate conventions
----------------------
Points are (x, y) with x along columns and y along rows.  The center of
pixel ``mask[r, c]`` sits at coordinate ``(c, r)``; a pixel is covered by a
polygon when its center is inside or on the polygon boundary.

All randomness comes from an explicit ``numpy.random.Generator`` so every
operation is reproducible and safe to run from parallel workers that own
their own streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DegenerateGeometryError

Array = np.ndarray

# Tolerance for "pixel center exactly on a polygon edge" decisions.
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class MaskParams:
    """Knobs of the blend-mask pipeline.

    deform_magnitude: max absolute per-coordinate vertex jitter in pixels.
        ``None`` scales the 64-px default of 4 px proportionally with the
        frame's smaller side.
    blur_sigma_range: closed interval the blur sigma is drawn from.
    intensity_levels: discrete set the global mask scale is drawn from;
        use ``(1.0,)`` to disable intensity scaling.
    """

    deform_magnitude: float | None = None
    blur_sigma_range: tuple[float, float] = (1.0, 3.0)
    intensity_levels: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def resolve_magnitude(self, height: int, width: int) -> float:
        if self.deform_magnitude is not None:
            return float(self.deform_magnitude)
        return 4.0 * min(height, width) / 64.0


def as_points(points) -> Array:
    """Coerce input to an (N, 2) float64 array of (x, y) coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateGeometryError(f"expected (N, 2) points, got shape {pts.shape}")
    return pts


def check_landmarks(points, height: int, width: int) -> Array:
    """Validate a 68-point landmark set against its frame bounds.

    Returns the points as an (68, 2) float64 array; raises ``ValueError``
    when the count is wrong or any point falls outside [0, W) x [0, H).
    """
    pts = as_points(points)
    if pts.shape[0] != 68:
        raise ValueError(f"expected 68 landmarks, got {pts.shape[0]}")
    if not np.isfinite(pts).all():
        raise ValueError("landmarks contain non-finite coordinates")
    x, y = pts[:, 0], pts[:, 1]
    if (x < 0).any() or (x >= width).any() or (y < 0).any() or (y >= height).any():
        raise ValueError("landmarks fall outside the frame bounds")
    return pts


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Array:
    """Minimal convex polygon containing all input points, CCW order.

    Uses the monotone-chain construction.  Collinear points interior to a
    hull edge are dropped, so the output is strictly convex.  The first
    vertex is the lexicographically smallest point, which makes the output
    deterministic for a given input set.

    Raises ``DegenerateGeometryError`` for fewer than 3 distinct points or
    an all-collinear input.
    """
    pts = as_points(points)
    if not np.isfinite(pts).all():
        raise DegenerateGeometryError("points contain non-finite coordinates")
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 distinct points")

    def build(chain_pts):
        chain: list[np.ndarray] = []
        for p in chain_pts:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = build(uniq)
    upper = build(uniq[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        raise DegenerateGeometryError("all points are collinear")
    return hull


def polygon_area(polygon) -> float:
    """Signed shoelace area; positive for CCW vertex order."""
    poly = as_points(polygon)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def rasterize(polygon, height: int, width: int) -> Array:
    """Binary coverage mask of a polygon on an H x W pixel grid.

    A pixel is set to 1.0 when its center is inside or on the polygon
    (even-odd rule, so deformed non-convex outlines are handled).  An empty
    polygon yields an all-zero mask.
    """
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be >= 1")
    mask = np.zeros((height, width), dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.size == 0:
        return mask
    poly = as_points(poly)
    if poly.shape[0] < 3:
        raise DegenerateGeometryError("non-empty polygon needs >= 3 vertices")

    px = np.arange(width, dtype=np.float64)[None, :]   # pixel-center x
    py = np.arange(height, dtype=np.float64)[:, None]  # pixel-center y
    inside = np.zeros((height, width), dtype=bool)
    on_edge = np.zeros((height, width), dtype=bool)

    verts = poly
    nxt = np.roll(verts, -1, axis=0)
    for (x1, y1), (x2, y2) in zip(verts, nxt):
        # Even-odd crossing count against a ray in +x direction.
        spans = (y1 > py) != (y2 > py)
        if spans.any():
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= spans & (px < xint)
        # Centers sitting exactly on the segment count as covered.
        dx, dy = x2 - x1, y2 - y1
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0.0:
            dist_ok = (np.abs(px - x1) < _EDGE_EPS) & (np.abs(py - y1) < _EDGE_EPS)
            on_edge |= dist_ok
            continue
        cross = (px - x1) * dy - (py - y1) * dx
        t = ((px - x1) * dx + (py - y1) * dy) / seg_len2
        on_edge |= (np.abs(cross) < _EDGE_EPS * max(1.0, math.sqrt(seg_len2))) & (t >= 0.0) & (t <= 1.0)

    mask[inside | on_edge] = 1.0
    return mask


def deform_polygon(polygon, rng: np.random.Generator, magnitude: float) -> Array:
    """Jitter each vertex independently by U[-magnitude, +magnitude] per axis.

    Output is not clipped; callers clip to their frame bounds.  Magnitude 0
    returns the input unchanged.
    """
    if magnitude < 0:
        raise ValueError("deformation magnitude must be >= 0")
    poly = as_points(polygon)
    offsets = rng.uniform(-magnitude, magnitude, size=poly.shape)
    return poly + offsets


def gaussian_blur(mask: Array, sigma: float) -> Array:
    """Separable Gaussian blur with a +/-3 sigma kernel and reflective borders.

    The truncated kernel is renormalized to sum 1, so constant inputs are
    preserved and the output range never exceeds the input range.  Sigma 0
    is the identity.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    arr = np.asarray(mask, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    out = gaussian_filter(arr, sigma=sigma, mode="reflect", truncate=3.0)
    return np.clip(out, 0.0, 1.0)


def make_blend_mask(
    landmarks,
    height: int,
    width: int,
    rng: np.random.Generator,
    params: MaskParams | None = None,
) -> Array:
    """Full blend-mask pipeline: hull -> deform -> rasterize -> blur -> scale.

    Draw order from ``rng`` is fixed (vertex jitter, blur sigma, intensity
    level) so a given seed always produces the same mask.  Deformed vertices
    are clipped to the frame before rasterization.  The result lies in
    [0, intensity] and its support stays within the deformed hull's bounding
    box expanded by the blur radius.
    """
    params = params or MaskParams()
    hull = convex_hull(landmarks)
    magnitude = params.resolve_magnitude(height, width)
    poly = deform_polygon(hull, rng, magnitude)
    poly[:, 0] = np.clip(poly[:, 0], 0.0, width - 1.0)
    poly[:, 1] = np.clip(poly[:, 1], 0.0, height - 1.0)
    mask = rasterize(poly, height, width)
    lo, hi = params.blur_sigma_range
    if not 0.0 <= lo <= hi:
        raise ValueError("blur_sigma_range must satisfy 0 <= lo <= hi")
    sigma = float(rng.uniform(lo, hi))
    mask = gaussian_blur(mask, sigma)
    levels = params.intensity_levels
    if len(levels) == 0:
        raise ValueError("intensity_levels must be non-empty")
    intensity = float(levels[rng.integers(len(levels))])
    if not 0.0 <= intensity <= 1.0:
        raise ValueError("intensity levels must lie in [0, 1]")
    return mask * intensity
