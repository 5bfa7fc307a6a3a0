import math

import numpy as np
import pytest

from cdfa.augment import (
    OPS,
    AugContext,
    AugOp,
    FaceFrame,
    SbiParams,
    apply_forgery_augmentation,
    blend,
    check_policy,
    landmark_distance,
    op_bi,
    op_sbi,
    op_ssbi,
    sample_op,
)
from cdfa.errors import DimensionMismatchError, InsufficientDataError, PolicySimplexError
from cdfa.geometry import MaskParams
from test_geometry import synthetic_landmarks


class RiggedRng:
    """Stand-in generator returning queued values for uniform/integers/random."""

    def __init__(self, uniforms=(), integers=(), randoms=()):
        self._uniforms = list(uniforms)
        self._integers = list(integers)
        self._randoms = list(randoms)

    def uniform(self, low=0.0, high=1.0, size=None):
        value = self._uniforms.pop(0)
        if size is None:
            return float(value)
        return np.full(size, value, dtype=np.float64)

    def integers(self, low, high=None, size=None):
        value = self._integers.pop(0)
        if size is None:
            return int(value)
        return np.full(size, value, dtype=np.int64)

    def random(self):
        return float(self._randoms.pop(0))


def make_frame(rng, size=24, video_id="vid0", frame_index=0, fill=None):
    if fill is not None:
        image = np.full((size, size, 3), fill, dtype=np.float64)
    else:
        image = rng.uniform(size=(size, size, 3))
    return FaceFrame(image, synthetic_landmarks(rng, size, size), video_id, frame_index)


def make_video(rng, n_frames, video_id, size=24):
    return [make_frame(rng, size=size, video_id=video_id, frame_index=i) for i in range(n_frames)]


def make_context(rng, n_videos=4, frames_each=12, size=24, **kwargs):
    videos = {}
    for v in range(n_videos):
        vid = f"vid{v}"
        videos[vid] = make_video(rng, frames_each, vid, size=size)
    reals = [f for frames in videos.values() for f in frames]
    return AugContext(real_frames=reals, videos=videos, **kwargs)


class TestBlend:
    def test_zero_mask_returns_source_bit_exact(self):
        rng = np.random.default_rng(0)
        src, tgt = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        out = blend(src, tgt, np.zeros((8, 8)))
        assert np.array_equal(out, src)

    def test_ones_mask_returns_target_bit_exact(self):
        rng = np.random.default_rng(1)
        src, tgt = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        assert np.array_equal(blend(src, tgt, np.ones((8, 8))), tgt)

    def test_half_mask_hand_oracle(self):
        # 0.8 * 0.5 + 0.2 * 0.5 = 0.5 at every pixel.
        src = np.full((4, 4, 3), 0.2)
        tgt = np.full((4, 4, 3), 0.8)
        out = blend(src, tgt, np.full((4, 4), 0.5))
        assert np.allclose(out, 0.5, atol=1e-15)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            src = rng.uniform(size=(6, 6, 3))
            tgt = rng.uniform(size=(6, 6, 3))
            m = rng.uniform(size=(6, 6))
            out = blend(src, tgt, m)
            lo = np.minimum(src, tgt)
            hi = np.maximum(src, tgt)
            assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            blend(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)), np.zeros((4, 4)))
        with pytest.raises(DimensionMismatchError):
            blend(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((5, 4)))


class TestOpBi:
    def test_exact_match_wins_with_zero_distance(self):
        rng = np.random.default_rng(0)
        src = make_frame(rng, video_id="a")
        twin = FaceFrame(src.image.copy(), src.landmarks.copy(), "b", 0)
        decoy = make_frame(rng, video_id="c")
        assert op_bi(src, [decoy, twin]) is twin
        assert landmark_distance(twin.landmarks, src.landmarks) == 0.0

    def test_hand_evaluated_distances(self):
        rng = np.random.default_rng(1)
        src = make_frame(rng, video_id="a")
        # +1 px on both coords per point -> distance 68*sqrt(2); +2 px -> double.
        lm_a = np.clip(src.landmarks + 1.0, 0, 23.0 - 1e-9)
        lm_b = np.clip(src.landmarks + 2.0, 0, 23.0 - 1e-9)
        cand_a = FaceFrame(src.image.copy(), lm_a, "b", 0)
        cand_b = FaceFrame(src.image.copy(), lm_b, "c", 0)
        assert op_bi(src, [cand_b, cand_a]) is cand_a

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(2)
        src = make_frame(rng, video_id="a")
        c1 = FaceFrame(src.image.copy(), src.landmarks.copy(), "b", 0)
        c2 = FaceFrame(src.image.copy(), src.landmarks.copy(), "c", 0)
        assert op_bi(src, [c1, c2]) is c1

    def test_empty_pool(self):
        rng = np.random.default_rng(3)
        with pytest.raises(InsufficientDataError):
            op_bi(make_frame(rng), [])

    def test_argmin_against_brute_force_scan(self):
        rng = np.random.default_rng(4)
        src = make_frame(rng, video_id="src")
        pool = [make_frame(rng, video_id=f"p{i}") for i in range(20)]
        best = op_bi(src, pool)
        dists = [landmark_distance(c.landmarks, src.landmarks) for c in pool]
        assert landmark_distance(best.landmarks, src.landmarks) == min(dists)


class TestOpSbi:
    def test_zero_ranges_identity(self):
        rng = np.random.default_rng(0)
        src = make_frame(rng)
        out = op_sbi(src, np.random.default_rng(1), SbiParams(brightness=0, shift=0, resize=0))
        assert np.array_equal(out.image, src.image)
        assert np.array_equal(out.landmarks, src.landmarks)

    def test_forced_brightness_scale(self):
        rng = np.random.default_rng(1)
        src = make_frame(rng, fill=0.3)
        rigged = RiggedRng(uniforms=[2.0, 0.0, 1.0])  # scale=2, shift=0, factor=1
        out = op_sbi(src, rigged, SbiParams())
        assert np.allclose(out.image, 0.6, atol=1e-15)

    def test_clipping_applies(self):
        rng = np.random.default_rng(2)
        src = make_frame(rng, fill=0.8)
        rigged = RiggedRng(uniforms=[2.0, 0.0, 1.0])
        out = op_sbi(src, rigged, SbiParams())
        assert np.allclose(out.image, 1.0)

    def test_fixed_seed_deterministic(self):
        rng = np.random.default_rng(3)
        src = make_frame(rng)
        a = op_sbi(src, np.random.default_rng(17), SbiParams())
        b = op_sbi(src, np.random.default_rng(17), SbiParams())
        assert np.array_equal(a.image, b.image)

    def test_does_not_mutate_source(self):
        rng = np.random.default_rng(4)
        src = make_frame(rng)
        before = src.image.copy()
        op_sbi(src, np.random.default_rng(5), SbiParams())
        assert np.array_equal(src.image, before)


class TestOpSsbi:
    def test_single_frame_video_rejected(self):
        rng = np.random.default_rng(0)
        video = make_video(rng, 1, "v")
        with pytest.raises(InsufficientDataError):
            op_ssbi(video[0], video, np.random.default_rng(1))

    def test_in_range_shift(self):
        rng = np.random.default_rng(1)
        video = make_video(rng, 20, "v")
        rigged = RiggedRng(integers=[6, 0])  # delta=6, sign +
        assert op_ssbi(video[3], video, rigged) is video[9]

    def test_clamp_then_step(self):
        rng = np.random.default_rng(2)
        video = make_video(rng, 20, "v")
        rigged = RiggedRng(integers=[6, 1])  # delta=6, sign -
        assert op_ssbi(video[0], video, rigged) is video[1]

    def test_clamp_then_step_at_end(self):
        rng = np.random.default_rng(3)
        video = make_video(rng, 8, "v")
        rigged = RiggedRng(integers=[9, 0])  # delta=9, sign + -> clamp to 7 == own
        assert op_ssbi(video[7], video, rigged) is video[6]

    def test_offset_distribution(self):
        rng = np.random.default_rng(4)
        video = make_video(rng, 31, "v", size=16)
        src = video[15]
        gen = np.random.default_rng(5)
        offsets = set()
        for _ in range(10_000):
            got = op_ssbi(src, video, gen)
            offsets.add(abs(got.frame_index - 15))
        assert offsets == {5, 6, 7, 8, 9, 10}

    def test_never_returns_source(self):
        rng = np.random.default_rng(6)
        video = make_video(rng, 6, "v", size=16)
        gen = np.random.default_rng(7)
        for src in video:
            for _ in range(50):
                assert op_ssbi(src, video, gen) is not src


class TestPolicySampling:
    def test_check_policy_rejects_bad_vectors(self):
        with pytest.raises(PolicySimplexError):
            check_policy([0.5, 0.5])
        with pytest.raises(PolicySimplexError):
            check_policy([0.7, 0.2, 0.2])
        with pytest.raises(PolicySimplexError):
            check_policy([1.2, -0.1, -0.1])

    def test_degenerate_policy_always_picks_that_op(self):
        gen = np.random.default_rng(0)
        for _ in range(1000):
            assert sample_op([1.0, 0.0, 0.0], gen) is AugOp.BI

    def test_frequencies_converge_to_policy(self):
        gen = np.random.default_rng(1)
        policy = np.ones(3) / 3.0
        counts = {op: 0 for op in OPS}
        n = 30_000
        for _ in range(n):
            counts[sample_op(policy, gen)] += 1
        for op in OPS:
            assert abs(counts[op] / n - 1 / 3) < 0.02


class TestApplyForgeryAugmentation:
    def test_degenerate_policy_selects_bi_every_time(self):
        rng = np.random.default_rng(0)
        ctx = make_context(rng)
        src = ctx.videos["vid0"][0]
        gen = np.random.default_rng(1)
        for _ in range(25):
            pf = apply_forgery_augmentation(src, [1.0, 0.0, 0.0], ctx, gen)
            assert pf.chosen_op is AugOp.BI

    def test_sampled_ops_cover_policy_support(self):
        rng = np.random.default_rng(1)
        ctx = make_context(rng)
        src = ctx.videos["vid0"][0]
        gen = np.random.default_rng(2)
        seen = {apply_forgery_augmentation(src, np.ones(3) / 3, ctx, gen).chosen_op for _ in range(60)}
        assert seen == set(OPS)

    def test_zero_intensity_mask_keeps_source_pixels_label_fake(self):
        rng = np.random.default_rng(2)
        ctx = make_context(rng, mask_params=MaskParams(intensity_levels=(0.0,)))
        src = ctx.videos["vid1"][2]
        pf = apply_forgery_augmentation(src, np.ones(3) / 3, ctx, np.random.default_rng(3))
        assert np.array_equal(pf.image, src.image)
        assert pf.label == 1
        assert np.array_equal(pf.mask, np.zeros_like(pf.mask))

    def test_inputs_not_mutated(self):
        rng = np.random.default_rng(3)
        ctx = make_context(rng)
        src = ctx.videos["vid0"][1]
        snapshots = [(f.image.copy(), f.landmarks.copy()) for f in ctx.real_frames[:8]]
        before = src.image.copy()
        apply_forgery_augmentation(src, np.ones(3) / 3, ctx, np.random.default_rng(4))
        assert np.array_equal(src.image, before)
        for f, (img, lm) in zip(ctx.real_frames[:8], snapshots):
            assert np.array_equal(f.image, img)
            assert np.array_equal(f.landmarks, lm)

    def test_fixed_seed_reproducible(self):
        rng = np.random.default_rng(4)
        ctx = make_context(rng)
        src = ctx.videos["vid2"][0]
        a = apply_forgery_augmentation(src, [0.2, 0.5, 0.3], ctx, np.random.default_rng(9))
        b = apply_forgery_augmentation(src, [0.2, 0.5, 0.3], ctx, np.random.default_rng(9))
        assert np.array_equal(a.image, b.image)
        assert a.chosen_op is b.chosen_op

    def test_bi_pool_excludes_source_video(self):
        rng = np.random.default_rng(5)
        video = make_video(rng, 10, "only")
        ctx = AugContext(real_frames=video, videos={"only": video})
        with pytest.raises(InsufficientDataError):
            apply_forgery_augmentation(video[0], [1.0, 0.0, 0.0], ctx, np.random.default_rng(6))

    def test_invalid_policy_raises(self):
        rng = np.random.default_rng(6)
        ctx = make_context(rng)
        with pytest.raises(PolicySimplexError):
            apply_forgery_augmentation(ctx.videos["vid0"][0], [0.9, 0.2, 0.2], ctx, np.random.default_rng(7))

    def test_output_in_unit_range(self):
        rng = np.random.default_rng(7)
        ctx = make_context(rng)
        gen = np.random.default_rng(8)
        for _ in range(10):
            pf = apply_forgery_augmentation(ctx.videos["vid3"][4], np.ones(3) / 3, ctx, gen)
            assert pf.image.min() >= 0.0 and pf.image.max() <= 1.0
