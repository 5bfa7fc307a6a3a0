"""Synthetic face-video corpus: generation, on-disk format, loading, sampling.

Each identity gets a parametric face (skin-tone ellipse, eyes, brows, mouth
on a textured background) with small per-frame motion, rendered at 8-bit
precision, plus exact 68-point landmarks computed analytically from the
render parameters in the standard iBUG ordering.  "Original fake" clips are
scripted manipulations: the face interior is swapped from another identity
through a hard elliptical mask and stamped with a tag-specific artifact
(color skew, blur, or edge ringing), so one tag can be held out to probe
cross-manipulation generalization.

Directory layout::

    root/manifest.json
    root/<video_id>/frame_0000.png ...
    root/<video_id>/landmarks.json

Faces occupy roughly 1/1.3 of the frame, mirroring the usual enlarged-crop
convention of face-forensics pipelines; no detector or cropper is involved.
"""

from __future__ import annotations

import json
import math
import os
import shutil
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .augment import FaceFrame
from .errors import ConfigError, DataIntegrityError, InsufficientDataError

Array = np.ndarray

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1

KNOWN_MANIPULATIONS = ("colorskew", "greenskew", "blur", "ringing")
DEFAULT_MANIPULATIONS = ("colorskew", "greenskew", "blur")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the procedural corpus."""

    n_identities: int
    frames_per_video: int
    image_size: int = 64
    manipulations: tuple[str, ...] = DEFAULT_MANIPULATIONS
    held_out: str = "blur"
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigError("image_size must be >= 16")
        if self.frames_per_video < 2:
            raise ConfigError("frames_per_video must be >= 2")
        if self.n_identities < 2:
            raise ConfigError("need at least 2 identities (manipulations swap between them)")
        if len(set(self.manipulations)) < 3:
            raise ConfigError("need at least 3 distinct manipulation tags")
        if self.held_out not in self.manipulations:
            raise ConfigError(f"held_out tag {self.held_out!r} not in manipulations")
        if not (0.0 <= self.val_fraction < 1.0 and 0.0 <= self.test_fraction < 1.0):
            raise ConfigError("split fractions must lie in [0, 1)")


@dataclass
class VideoEntry:
    video_id: str
    path: str
    source_label: str            # "real" | "ofake"
    manipulation_tag: str | None
    split: str                   # "train" | "val" | "test"
    n_frames: int


@dataclass
class CorpusManifest:
    image_size: int
    videos: list[VideoEntry]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(ids) != len(set(ids)):
            raise DataIntegrityError("duplicate video_id in manifest")


@dataclass
class VideoClip:
    video_id: str
    frames: list[FaceFrame]
    source_label: str
    manipulation_tag: str | None = None

    def __post_init__(self):
        if not self.frames:
            raise DataIntegrityError(f"clip {self.video_id!r} has no frames")
        shape = self.frames[0].image.shape
        for i, f in enumerate(self.frames):
            if f.image.shape != shape:
                raise DataIntegrityError(f"clip {self.video_id!r} mixes frame shapes")
            if f.video_id != self.video_id or f.frame_index != i:
                raise DataIntegrityError(f"clip {self.video_id!r} has inconsistent frame indexing")


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def identity_params(seed_seq: np.random.SeedSequence, size: int) -> dict:
    """Draw one identity's render parameters from its own seed stream.

    Identity i of a corpus uses ``SeedSequence(cfg.seed).spawn(n)[i]``, so
    parameters can be re-derived independently of the generation order.
    """
    rng = np.random.default_rng(seed_seq)
    s = float(size)
    # Skin tones vary only mildly across identities so a face swap leaves
    # little global color trace; fakes must be caught by texture anomalies.
    base_r = 0.68 + 0.08 * rng.random()
    skin = np.array([base_r, base_r * (0.80 + 0.05 * rng.random()), base_r * (0.58 + 0.06 * rng.random())])
    return {
        "skin": skin,
        "bg0": rng.uniform(0.10, 0.40, size=3),
        "bg1": rng.uniform(0.40, 0.75, size=3),
        "tex_freq": rng.uniform(1.5, 4.5, size=2),
        "tex_phase": float(rng.uniform(0.0, 2.0 * math.pi)),
        "tex_amp": float(rng.uniform(0.02, 0.05)),
        "cx": s * (0.5 + 0.02 * (rng.random() - 0.5)),
        "cy": s * (0.5 + 0.02 * (rng.random() - 0.5)),
        "a": s * rng.uniform(0.33, 0.37),
        "b": s * rng.uniform(0.355, 0.385),
        "motion_amp": s * rng.uniform(0.012, 0.030),
        "motion_phase": rng.uniform(0.0, 2.0 * math.pi, size=2),
        "motion_period": float(rng.uniform(6.0, 12.0)),
        "grain_freq": rng.uniform(8.0, 14.0, size=2),
        "grain_phase": float(rng.uniform(0.0, 2.0 * math.pi)),
        "grain_amp": float(rng.uniform(0.035, 0.055)),
        "eye_dx": float(rng.uniform(0.38, 0.46)),
        "eye_y": float(rng.uniform(0.28, 0.34)),
        "eye_rx": float(rng.uniform(0.13, 0.17)),
        "eye_ry": float(rng.uniform(0.09, 0.13)),
        "mouth_y": float(rng.uniform(0.42, 0.50)),
        "mouth_w": float(rng.uniform(0.30, 0.40)),
        "mouth_h": float(rng.uniform(0.10, 0.16)),
        "pupil": rng.uniform(0.05, 0.15, size=3),
        "mouth_col": np.array([0.45 + 0.20 * rng.random(), 0.15 + 0.10 * rng.random(), 0.18 + 0.10 * rng.random()]),
    }


def frame_geometry(idp: dict, frame_idx: int) -> tuple[float, float, float, float]:
    """Face ellipse (cx, cy, a, b) for one frame, including the motion drift."""
    w = 2.0 * math.pi * frame_idx / idp["motion_period"]
    cx = idp["cx"] + idp["motion_amp"] * math.sin(w + idp["motion_phase"][0])
    cy = idp["cy"] + idp["motion_amp"] * math.sin(w + idp["motion_phase"][1])
    a = idp["a"] * (1.0 + 0.01 * math.sin(2.0 * w + idp["motion_phase"][0]))
    b = idp["b"] * (1.0 + 0.01 * math.cos(2.0 * w + idp["motion_phase"][1]))
    return cx, cy, a, b


def _soft_ellipse(xx, yy, cx, cy, rx, ry, edge):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return np.clip((1.0 - d) / edge, 0.0, 1.0)


def _paint(img, alpha, color):
    img *= 1.0 - alpha[:, :, None]
    img += alpha[:, :, None] * color


def landmark_points(idp: dict, frame_idx: int) -> Array:
    """Exact 68-point landmark set (iBUG ordering) for one frame."""
    cx, cy, a, b = frame_geometry(idp, frame_idx)
    pts = np.zeros((68, 2))
    # 0-16 jaw: left ear -> chin -> right ear along the lower face contour.
    t = np.linspace(0.0, 1.0, 17)
    pts[0:17, 0] = cx + a * np.cos(math.pi - t * math.pi)
    pts[0:17, 1] = cy + b * np.sin(t * math.pi)
    ex_l = cx - idp["eye_dx"] * a
    ex_r = cx + idp["eye_dx"] * a
    ey = cy - idp["eye_y"] * b
    erx = idp["eye_rx"] * a
    ery = idp["eye_ry"] * b
    # 17-26 eyebrows, arched slightly upward.
    tb = np.linspace(0.0, 1.0, 5)
    brow_y = ey - 0.16 * b
    for base, ex in ((17, ex_l), (22, ex_r)):
        pts[base : base + 5, 0] = ex + (tb - 0.5) * 2.0 * 1.4 * erx
        pts[base : base + 5, 1] = brow_y - 0.04 * b * np.sin(tb * math.pi)
    # 27-30 nose bridge, 31-35 nose bottom row.
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(cy - 0.22 * b, cy + 0.08 * b, 4)
    pts[31:36, 0] = cx + np.linspace(-0.10, 0.10, 5) * a
    pts[31:36, 1] = cy + 0.16 * b
    # 36-47 eyes: six points around each eye ellipse.
    eye_angles = np.deg2rad([180.0, 130.0, 50.0, 0.0, 310.0, 230.0])
    for base, ex in ((36, ex_l), (42, ex_r)):
        pts[base : base + 6, 0] = ex + erx * np.cos(eye_angles)
        pts[base : base + 6, 1] = ey - ery * np.sin(eye_angles)
    # 48-59 outer lips, 60-67 inner lips.
    mx, my = cx, cy + idp["mouth_y"] * b
    mrx, mry = idp["mouth_w"] * a, idp["mouth_h"] * b
    outer = np.deg2rad([180, 150, 120, 90, 60, 30, 0, 330, 300, 270, 240, 210])
    pts[48:60, 0] = mx + mrx * np.cos(outer)
    pts[48:60, 1] = my - mry * np.sin(outer)
    inner = np.deg2rad([180, 135, 90, 45, 0, 315, 270, 225])
    pts[60:68, 0] = mx + 0.55 * mrx * np.cos(inner)
    pts[60:68, 1] = my - 0.55 * mry * np.sin(inner)
    return pts


def render_frame(idp: dict, frame_idx: int, size: int) -> Array:
    """Render one real frame as a uint8 (S, S, 3) array."""
    s = size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    grad = (xx + yy) / (2.0 * (s - 1))
    img = idp["bg0"][None, None, :] + (idp["bg1"] - idp["bg0"])[None, None, :] * grad[:, :, None]
    fx, fy = idp["tex_freq"]
    img += (idp["tex_amp"] * np.sin(2.0 * math.pi * (fx * xx + fy * yy) / s + idp["tex_phase"]))[:, :, None]

    cx, cy, a, b = frame_geometry(idp, frame_idx)
    face = _soft_ellipse(xx, yy, cx, cy, a, b, 0.06)
    shade = 1.0 - 0.18 * np.clip((yy - (cy - b)) / (2.0 * b), 0.0, 1.0)
    gx, gy = idp["grain_freq"]
    grain = idp["grain_amp"] * np.sin(2.0 * math.pi * (gx * xx + gy * yy) / s + idp["grain_phase"]) \
        * np.sin(2.0 * math.pi * (gy * xx - gx * yy) / s)
    face_col = idp["skin"][None, None, :] * (shade + grain)[:, :, None]
    img = img * (1.0 - face[:, :, None]) + face_col * face[:, :, None]

    ex_l = cx - idp["eye_dx"] * a
    ex_r = cx + idp["eye_dx"] * a
    ey = cy - idp["eye_y"] * b
    erx = idp["eye_rx"] * a
    ery = idp["eye_ry"] * b
    for ex in (ex_l, ex_r):
        _paint(img, _soft_ellipse(xx, yy, ex, ey, erx, ery, 0.25), np.array([0.93, 0.93, 0.90]))
        _paint(img, _soft_ellipse(xx, yy, ex, ey, 0.45 * erx, 0.55 * ery, 0.45), idp["pupil"])
        _paint(img, 0.8 * _soft_ellipse(xx, yy, ex, ey - 0.16 * b - ery, 1.4 * erx, 0.05 * b, 0.6), 0.35 * idp["pupil"])
    mx, my = cx, cy + idp["mouth_y"] * b
    _paint(img, _soft_ellipse(xx, yy, mx, my, idp["mouth_w"] * a, idp["mouth_h"] * b, 0.3), idp["mouth_col"])
    # Faint nose-bridge highlight.
    _paint(img, 0.35 * _soft_ellipse(xx, yy, cx, cy - 0.05 * b, 0.06 * a, 0.20 * b, 0.8), np.clip(idp["skin"] * 1.15, 0, 1))

    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _swap_interior(src8: Array, donor8: Array, cx, cy, a, b, tag: str, size: int) -> Array:
    """Scripted manipulation: hard elliptical swap plus a tag artifact."""
    src = src8.astype(np.float64) / 255.0
    donor = donor8.astype(np.float64) / 255.0
    s = size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    d = ((xx - cx) / (0.85 * a)) ** 2 + ((yy - cy) / (0.85 * b)) ** 2
    hard = d <= 1.0

    if tag == "colorskew":
        interior = np.clip(donor + np.array([0.07, -0.03, -0.04]), 0.0, 1.0)
    elif tag == "greenskew":
        interior = np.clip(donor + np.array([-0.03, 0.07, -0.03]), 0.0, 1.0)
    elif tag == "blur":
        sigma = max(1.5, s / 13.0)
        interior = gaussian_filter(donor, sigma=(sigma, sigma, 0.0), mode="reflect")
    elif tag == "ringing":
        s1 = max(0.5, s / 90.0)
        g1 = gaussian_filter(donor, sigma=(s1, s1, 0.0), mode="reflect")
        g2 = gaussian_filter(donor, sigma=(3.0 * s1, 3.0 * s1, 0.0), mode="reflect")
        interior = np.clip(donor + 1.4 * (g1 - g2), 0.0, 1.0)
    else:
        raise ConfigError(f"unknown manipulation tag {tag!r}")

    out = np.where(hard[:, :, None], interior, src)
    return np.round(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class _BuiltClip:
    video_id: str
    frames8: list[Array]            # uint8 images
    landmarks: list[Array]
    source_label: str
    manipulation_tag: str | None
    identity: int


def build_corpus_clips(cfg: SynthConfig) -> list[_BuiltClip]:
    """Render every real and o-fake clip in memory, in manifest order."""
    id_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_identities)
    params = [identity_params(ss, cfg.image_size) for ss in id_seeds]
    reals: list[_BuiltClip] = []
    for i in range(cfg.n_identities):
        frames8 = [render_frame(params[i], f, cfg.image_size) for f in range(cfg.frames_per_video)]
        lms = [landmark_points(params[i], f) for f in range(cfg.frames_per_video)]
        reals.append(_BuiltClip(f"id{i:04d}", frames8, lms, "real", None, i))

    clips = list(reals)
    n = cfg.n_identities
    for i in range(n):
        for t_idx, tag in enumerate(cfg.manipulations):
            donor = (i + 1 + (t_idx % (n - 1))) % n
            frames8 = []
            for f in range(cfg.frames_per_video):
                cx, cy, a, b = frame_geometry(params[i], f)
                frames8.append(
                    _swap_interior(reals[i].frames8[f], reals[donor].frames8[f], cx, cy, a, b, tag, cfg.image_size)
                )
            clips.append(
                _BuiltClip(f"id{i:04d}_{tag}", frames8, [lm.copy() for lm in reals[i].landmarks], "ofake", tag, i)
            )
    return clips


def _assign_splits(cfg: SynthConfig, clips: list[_BuiltClip]) -> dict[str, str]:
    """Identity-level train/val/test split; held-out-tag clips all go to test."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.n_identities + 1)[-1])
    order = rng.permutation(cfg.n_identities)
    n_test = max(1, round(cfg.test_fraction * cfg.n_identities)) if cfg.test_fraction > 0 else 0
    n_val = max(1, round(cfg.val_fraction * cfg.n_identities)) if cfg.val_fraction > 0 else 0
    if cfg.n_identities - n_test - n_val < 1:
        raise ConfigError("split fractions leave no training identities")
    id_split = {}
    for rank, ident in enumerate(order):
        if rank < n_test:
            id_split[int(ident)] = "test"
        elif rank < n_test + n_val:
            id_split[int(ident)] = "val"
        else:
            id_split[int(ident)] = "train"
    splits = {}
    for clip in clips:
        if clip.manipulation_tag == cfg.held_out:
            splits[clip.video_id] = "test"
        else:
            splits[clip.video_id] = id_split[clip.identity]
    return splits


def generate_synthetic_corpus(cfg: SynthConfig, root) -> CorpusManifest:
    """Render the corpus and write it under ``root``; returns the manifest.

    The corpus is built in a scratch directory next to ``root`` and swapped
    into place only when complete, so a failed run leaves no partial tree.
    ``root`` may already hold a previous corpus (it is replaced); any other
    non-empty directory is refused.
    """
    root = str(root)
    if os.path.isdir(root) and os.listdir(root) and not os.path.exists(os.path.join(root, MANIFEST_NAME)):
        raise DataIntegrityError(f"refusing to overwrite non-corpus directory {root}")

    clips = build_corpus_clips(cfg)
    splits = _assign_splits(cfg, clips)

    scratch = f"{root}.partial-{os.getpid()}"
    if os.path.exists(scratch):
        shutil.rmtree(scratch)
    os.makedirs(scratch)
    entries = []
    try:
        for clip in sorted(clips, key=lambda c: c.video_id):
            vdir = os.path.join(scratch, clip.video_id)
            os.makedirs(vdir)
            for f, arr8 in enumerate(clip.frames8):
                Image.fromarray(arr8, "RGB").save(os.path.join(vdir, f"frame_{f:04d}.png"), format="PNG")
            lm_doc = {
                "video_id": clip.video_id,
                "frames": [
                    {"index": f, "points": [[float(x), float(y)] for x, y in lm]}
                    for f, lm in enumerate(clip.landmarks)
                ],
            }
            with open(os.path.join(vdir, "landmarks.json"), "w") as fh:
                json.dump(lm_doc, fh, sort_keys=True, separators=(",", ":"))
            entries.append(
                VideoEntry(
                    video_id=clip.video_id,
                    path=clip.video_id,
                    source_label=clip.source_label,
                    manipulation_tag=clip.manipulation_tag,
                    split=splits[clip.video_id],
                    n_frames=len(clip.frames8),
                )
            )
        manifest = CorpusManifest(image_size=cfg.image_size, videos=entries)
        with open(os.path.join(scratch, MANIFEST_NAME), "w") as fh:
            json.dump(_manifest_to_doc(manifest), fh, indent=1, sort_keys=True)
        if os.path.exists(root):
            shutil.rmtree(root)
        os.replace(scratch, root)
    finally:
        if os.path.exists(scratch):
            shutil.rmtree(scratch)
    return manifest


def _manifest_to_doc(manifest: CorpusManifest) -> dict:
    return {
        "format_version": manifest.format_version,
        "image_size": manifest.image_size,
        "videos": [
            {
                "video_id": v.video_id,
                "path": v.path,
                "source_label": v.source_label,
                "manipulation_tag": v.manipulation_tag,
                "split": v.split,
                "n_frames": v.n_frames,
            }
            for v in manifest.videos
        ],
    }


# ---------------------------------------------------------------------------
# Loading and sampling
# ---------------------------------------------------------------------------

class Corpus:
    """Manifest plus lazy, cached frame access."""

    def __init__(self, root: str, manifest: CorpusManifest):
        self.root = str(root)
        self.manifest = manifest
        self._by_id = {v.video_id: v for v in manifest.videos}
        self._clips: dict[str, VideoClip] = {}

    @property
    def image_size(self) -> int:
        return self.manifest.image_size

    def entries(self, split: str | None = None, label: str | None = None, tag: str | None = None) -> list[VideoEntry]:
        out = []
        for v in self.manifest.videos:
            if split is not None and v.split != split:
                continue
            if label is not None and v.source_label != label:
                continue
            if tag is not None and v.manipulation_tag != tag:
                continue
            out.append(v)
        return out

    def clip(self, video_id: str) -> VideoClip:
        if video_id in self._clips:
            return self._clips[video_id]
        entry = self._by_id.get(video_id)
        if entry is None:
            raise InsufficientDataError(f"unknown video_id {video_id!r}")
        vdir = os.path.join(self.root, entry.path)
        with open(os.path.join(vdir, "landmarks.json")) as fh:
            lm_doc = json.load(fh)
        if lm_doc.get("video_id") != video_id:
            raise DataIntegrityError(f"landmark file for {video_id!r} names {lm_doc.get('video_id')!r}")
        lm_by_index = {rec["index"]: np.array(rec["points"], dtype=np.float64) for rec in lm_doc["frames"]}
        frames = []
        for f in range(entry.n_frames):
            arr = np.asarray(Image.open(os.path.join(vdir, f"frame_{f:04d}.png")).convert("RGB"))
            if f not in lm_by_index:
                raise DataIntegrityError(f"missing landmarks for {video_id!r} frame {f}")
            frames.append(FaceFrame(arr.astype(np.float64) / 255.0, lm_by_index[f], video_id, f))
        clip = VideoClip(video_id, frames, entry.source_label, entry.manipulation_tag)
        self._clips[video_id] = clip
        return clip

    def frames(self, split: str, label: str | None = None, tag: str | None = None) -> list[FaceFrame]:
        out: list[FaceFrame] = []
        for entry in self.entries(split=split, label=label, tag=tag):
            out.extend(self.clip(entry.video_id).frames)
        return out

    def videos_by_id(self, split: str, label: str | None = None) -> dict[str, list[FaceFrame]]:
        return {e.video_id: self.clip(e.video_id).frames for e in self.entries(split=split, label=label)}


def load_corpus(root) -> Corpus:
    """Read a manifest and return lazy frame access for the tree under it."""
    path = os.path.join(str(root), MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataIntegrityError(f"no {MANIFEST_NAME} under {root}")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataIntegrityError(f"unsupported corpus format_version {doc.get('format_version')!r}")
    videos = [
        VideoEntry(
            video_id=v["video_id"],
            path=v["path"],
            source_label=v["source_label"],
            manipulation_tag=v["manipulation_tag"],
            split=v["split"],
            n_frames=int(v["n_frames"]),
        )
        for v in doc["videos"]
    ]
    return Corpus(root, CorpusManifest(image_size=int(doc["image_size"]), videos=videos))


def _sample_frames(corpus: Corpus, split: str, label: str, n: int, rng: np.random.Generator) -> list[FaceFrame]:
    if n == 0:
        return []
    pool = corpus.frames(split, label=label)
    if not pool:
        raise InsufficientDataError(f"no {label} frames in split {split!r}")
    idx = rng.integers(0, len(pool), size=n)
    return [pool[int(i)] for i in idx]


def sample_real(corpus: Corpus, split: str, n: int, rng: np.random.Generator) -> list[FaceFrame]:
    """Uniform draws (with replacement) over the split's real frames."""
    return _sample_frames(corpus, split, "real", n, rng)


def sample_ofake(corpus: Corpus, split: str, n: int, rng: np.random.Generator) -> list[FaceFrame]:
    """Uniform draws (with replacement) over the split's o-fake frames."""
    return _sample_frames(corpus, split, "ofake", n, rng)
