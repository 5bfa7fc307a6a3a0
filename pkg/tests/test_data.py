import json
import os

import numpy as np
import pytest

from cdfa.data import (
    Corpus,
    SynthConfig,
    build_corpus_clips,
    frame_geometry,
    generate_synthetic_corpus,
    identity_params,
    load_corpus,
    sample_ofake,
    sample_real,
)
from cdfa.errors import ConfigError, DataIntegrityError, InsufficientDataError
from cdfa.geometry import check_landmarks

SMALL = SynthConfig(n_identities=10, frames_per_video=8, image_size=32, seed=3)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus") / "small"
    manifest = generate_synthetic_corpus(SMALL, root)
    return root, manifest, load_corpus(root)


def tree_bytes(root):
    out = {}
    for dirpath, _, filenames in os.walk(root):
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


class TestSynthConfig:
    def test_invariants_enforced(self):
        with pytest.raises(ConfigError):
            SynthConfig(n_identities=4, frames_per_video=8, image_size=8)
        with pytest.raises(ConfigError):
            SynthConfig(n_identities=4, frames_per_video=1)
        with pytest.raises(ConfigError):
            SynthConfig(n_identities=4, frames_per_video=4, manipulations=("a", "b"))
        with pytest.raises(ConfigError):
            SynthConfig(n_identities=4, frames_per_video=4, held_out="nope")


class TestGeneration:
    def test_clip_counts_and_landmark_validity(self, small_corpus):
        root, manifest, corpus = small_corpus
        reals = corpus.entries(label="real")
        ofakes = corpus.entries(label="ofake")
        assert len(reals) == 10
        assert len(ofakes) == 10 * len(SMALL.manipulations)
        for entry in manifest.videos:
            clip = corpus.clip(entry.video_id)
            assert len(clip.frames) == 8
            for frame in clip.frames:
                check_landmarks(frame.landmarks, 32, 32)
                assert frame.image.shape == (32, 32, 3)
                assert 0.0 <= frame.image.min() and frame.image.max() <= 1.0

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_identities=4, frames_per_video=3, image_size=24, seed=9)
        generate_synthetic_corpus(cfg, tmp_path / "a")
        generate_synthetic_corpus(cfg, tmp_path / "b")
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_landmarks_inside_rendered_face_bbox(self):
        cfg = SynthConfig(n_identities=3, frames_per_video=4, image_size=40, seed=11)
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_identities)
        for i, ss in enumerate(seeds):
            idp = identity_params(ss, cfg.image_size)
            for f in range(cfg.frames_per_video):
                from cdfa.data import landmark_points

                cx, cy, a, b = frame_geometry(idp, f)
                pts = landmark_points(idp, f)
                assert (pts[:, 0] >= cx - a - 1e-9).all() and (pts[:, 0] <= cx + a + 1e-9).all()
                assert (pts[:, 1] >= cy - b - 1e-9).all() and (pts[:, 1] <= cy + b + 1e-9).all()

    def test_splits_disjoint_at_video_level(self, small_corpus):
        _, manifest, _ = small_corpus
        seen = {}
        for v in manifest.videos:
            assert v.video_id not in seen
            seen[v.video_id] = v.split
        assert set(seen.values()) == {"train", "val", "test"}

    def test_every_ofake_has_real_counterpart(self, small_corpus):
        _, manifest, _ = small_corpus
        real_ids = {v.video_id for v in manifest.videos if v.source_label == "real"}
        for v in manifest.videos:
            if v.source_label == "ofake":
                assert v.video_id.split("_")[0] in real_ids

    def test_held_out_tag_confined_to_test_split(self, small_corpus):
        _, manifest, _ = small_corpus
        for v in manifest.videos:
            if v.manipulation_tag == SMALL.held_out:
                assert v.split == "test"
        test_tags = {v.manipulation_tag for v in manifest.videos
                     if v.split == "test" and v.source_label == "ofake"}
        assert SMALL.held_out in test_tags

    def test_refuses_to_replace_foreign_directory(self, tmp_path):
        target = tmp_path / "occupied"
        target.mkdir()
        (target / "precious.txt").write_text("do not delete")
        cfg = SynthConfig(n_identities=3, frames_per_video=2, image_size=16, seed=0)
        with pytest.raises(DataIntegrityError):
            generate_synthetic_corpus(cfg, target)
        assert (target / "precious.txt").exists()


class TestRoundTrip:
    def test_pixels_bit_exact_and_landmarks_full_precision(self, small_corpus):
        root, _, corpus = small_corpus
        clips = build_corpus_clips(SMALL)
        by_id = {c.video_id: c for c in clips}
        for entry in corpus.manifest.videos[:6]:
            built = by_id[entry.video_id]
            clip = corpus.clip(entry.video_id)
            for f, frame in enumerate(clip.frames):
                stored8 = np.round(frame.image * 255.0).astype(np.uint8)
                assert np.array_equal(stored8, built.frames8[f])
                assert np.array_equal(frame.landmarks, built.landmarks[f])

    def test_manifest_schema_versioned(self, small_corpus):
        root, _, _ = small_corpus
        with open(os.path.join(root, "manifest.json")) as fh:
            doc = json.load(fh)
        assert doc["format_version"] == 1

    def test_load_rejects_unknown_version(self, tmp_path, small_corpus):
        root, _, _ = small_corpus
        bad_root = tmp_path / "bad"
        bad_root.mkdir()
        with open(os.path.join(root, "manifest.json")) as fh:
            doc = json.load(fh)
        doc["format_version"] = 99
        with open(bad_root / "manifest.json", "w") as fh:
            json.dump(doc, fh)
        with pytest.raises(DataIntegrityError):
            load_corpus(bad_root)


class TestSampling:
    def test_empty_request(self, small_corpus):
        _, _, corpus = small_corpus
        assert sample_real(corpus, "train", 0, np.random.default_rng(0)) == []

    def test_split_and_label_respected(self, small_corpus):
        _, _, corpus = small_corpus
        val_real_ids = {e.video_id for e in corpus.entries(split="val", label="real")}
        frames = sample_real(corpus, "val", 40, np.random.default_rng(1))
        assert all(f.video_id in val_real_ids for f in frames)
        ofake_ids = {e.video_id for e in corpus.entries(split="train", label="ofake")}
        frames = sample_ofake(corpus, "train", 40, np.random.default_rng(2))
        assert all(f.video_id in ofake_ids for f in frames)

    def test_empty_split_raises(self, tmp_path):
        cfg = SynthConfig(n_identities=3, frames_per_video=2, image_size=16,
                          val_fraction=0.0, seed=1)
        root = tmp_path / "novalsplit"
        generate_synthetic_corpus(cfg, root)
        corpus = load_corpus(root)
        with pytest.raises(InsufficientDataError):
            sample_real(corpus, "val", 1, np.random.default_rng(0))

    def test_draws_uniform_over_eligible_frames(self, small_corpus):
        _, _, corpus = small_corpus
        pool = corpus.frames("train", label="real")
        n_eligible = len(pool)
        draws = 50_000
        frames = sample_real(corpus, "train", draws, np.random.default_rng(3))
        counts = {}
        for f in frames:
            counts[(f.video_id, f.frame_index)] = counts.get((f.video_id, f.frame_index), 0) + 1
        expected = draws / n_eligible
        assert len(counts) == n_eligible
        for count in counts.values():
            assert abs(count - expected) / expected < 0.10
