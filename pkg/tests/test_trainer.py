import copy
import os

import numpy as np
import pytest

import cdfa.augment as augment_mod
import cdfa.nets as nets_mod
from cdfa.augment import AugContext, AugOp, PseudoFake
from cdfa.curriculum import BatchPlan, TrainingBatch, BatchItem, compose_batch
from cdfa.data import SynthConfig, generate_synthetic_corpus, load_corpus
from cdfa.errors import ConfigError
from cdfa.geometry import MaskParams
from cdfa.nets import NetConfig, bce_loss, classify, features, load_checkpoint
from cdfa.trainer import (
    EPOCH_CSV_HEADER,
    TrainConfig,
    VARIANT_PRESETS,
    apply_variant,
    build_search_batch,
    detector_phase_step,
    evaluate_frames,
    init_state,
    policy_phase_step,
    run_training,
    train_cdfa,
)

TINY_NET = NetConfig(conv_channels=(4, 8), feature_dim=8, policy_hidden=(8, 6))


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainer") / "tiny"
    cfg = SynthConfig(n_identities=8, frames_per_video=6, image_size=16,
                      val_fraction=0.25, test_fraction=0.2, seed=5)
    generate_synthetic_corpus(cfg, root)
    return load_corpus(root)


def snapshot(store):
    return {k: v.copy() for k, v in store.items()}


def stores_equal(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a.keys())


def make_setup(corpus, config):
    state = init_state(config, TINY_NET)
    reals = corpus.frames("train", label="real")
    ofakes = corpus.frames("train", label="ofake")
    videos = {**corpus.videos_by_id("train", label="real"),
              **corpus.videos_by_id("val", label="real")}
    ctx = AugContext(real_frames=reals, videos=videos, mask_params=MaskParams())
    return state, reals, ofakes, ctx


class TestConfigValidation:
    def test_variant_matrix_has_twelve_ablation_presets(self):
        ablation = {k for k in VARIANT_PRESETS if k != "baseline"}
        assert len(ablation) == 12
        assert {f"variant{i}" for i in range(1, 12)} | {"cdfa"} == ablation

    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(total_epochs=5, warmup_epochs=5)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=7)
        with pytest.raises(ConfigError):
            TrainConfig(search_frequency=0)
        with pytest.raises(ConfigError):
            TrainConfig(enabled_ops=())
        with pytest.raises(ConfigError):
            TrainConfig(enabled_ops=("bi", "nope"))
        with pytest.raises(ConfigError):
            TrainConfig(use_mc=True, use_ofake=False)

    def test_resolved_pfake_fraction(self):
        assert apply_variant(TrainConfig(), "variant4").resolved_pfake_fraction() == 1.0
        assert apply_variant(TrainConfig(), "variant10").resolved_pfake_fraction() == 0.5
        assert apply_variant(TrainConfig(), "baseline").resolved_pfake_fraction() == 0.0

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            apply_variant(TrainConfig(), "variant99")


class TestPhaseSteps:
    def test_detector_step_leaves_gamma_bit_exact(self, tiny_corpus):
        config = TrainConfig(total_epochs=4, warmup_epochs=1, batch_size=8, seed=0)
        state, reals, ofakes, ctx = make_setup(tiny_corpus, config)
        gamma_before = snapshot(state.gamma)
        plan = BatchPlan(4, 2, 2, 8)
        batch = compose_batch(plan, reals, ofakes, lambda f: np.ones(3) / 3, ctx, state.rng)
        detector_phase_step(state, batch, config)
        assert stores_equal(state.gamma, gamma_before)
        assert state.global_step == 1

    def test_policy_step_leaves_detector_bit_exact(self, tiny_corpus):
        config = TrainConfig(total_epochs=4, warmup_epochs=1, batch_size=8, seed=1)
        state, reals, ofakes, ctx = make_setup(tiny_corpus, config)
        alpha_before, beta_before = snapshot(state.alpha), snapshot(state.beta)
        gamma_before = snapshot(state.gamma)
        pool = tiny_corpus.frames("val", label="real")
        policy_phase_step(state, config, pool, ctx)
        assert stores_equal(state.alpha, alpha_before)
        assert stores_equal(state.beta, beta_before)
        assert not stores_equal(state.gamma, gamma_before)

    def test_search_batch_is_half_real_half_soft_fake(self, tiny_corpus):
        config = TrainConfig(total_epochs=4, warmup_epochs=1, batch_size=8, seed=2)
        state, _, _, ctx = make_setup(tiny_corpus, config)
        pool = tiny_corpus.frames("val", label="real")
        batch = build_search_batch(state, config, pool, ctx)
        assert batch.real_images.shape[0] == 4
        assert len(batch.pfake_caches) == 4

    def test_duplicated_item_batch_loss_equals_single_bce(self, tiny_corpus):
        config = TrainConfig(total_epochs=4, warmup_epochs=1, batch_size=8, seed=3)
        state, reals, _, _ = make_setup(tiny_corpus, config)
        frame = reals[0]
        items = [BatchItem(frame.image, 1, "real", frame.video_id, frame.frame_index)] * 6
        batch = TrainingBatch(list(items))
        single = bce_loss(classify(features(frame.image, state.alpha), state.beta), 1.0)
        loss = detector_phase_step(state, batch, config)
        assert loss == pytest.approx(single, abs=1e-12)

    def test_repeated_steps_overfit_fixed_batch(self, tiny_corpus):
        config = TrainConfig(total_epochs=60, warmup_epochs=1, batch_size=8, lr0=3e-3, seed=4)
        state, reals, ofakes, ctx = make_setup(tiny_corpus, config)
        plan = BatchPlan(4, 4, 0, 8)
        batch = compose_batch(plan, reals, ofakes, lambda f: np.ones(3) / 3, ctx, state.rng)
        first = detector_phase_step(state, batch, config)
        last = first
        for _ in range(49):
            last = detector_phase_step(state, batch, config)
        assert last < first


class TestRiggedPolicySearch:
    def test_policy_weight_moves_to_the_easy_operator(self, tiny_corpus, monkeypatch):
        # SSBI variants become trivially classifiable fakes; BI/SBI become
        # pure noise.  The search loss is then minimized by weighting SSBI,
        # so its epoch-mean policy weight must grow.
        def rigged(op, source, context, rng):
            h, w = source.image.shape[:2]
            if op is AugOp.SSBI:
                image = np.full((h, w, 3), 0.95)
            else:
                image = rng.random((h, w, 3))
            return PseudoFake(image, np.ones((h, w)), op)

        monkeypatch.setattr(augment_mod, "realize_operator", rigged)
        monkeypatch.setattr(nets_mod, "realize_operator", rigged)

        config = TrainConfig(total_epochs=20, warmup_epochs=0, batch_size=8,
                             search_frequency=1, lr0=3e-3, seed=7)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        start = np.mean([l.policy[2] for l in logs[:3]])
        end = np.mean([l.policy[2] for l in logs[-3:]])
        assert end > start
        assert end > 0.5


class TestTrainLoop:
    def test_epoch_log_count_and_cadence(self, tiny_corpus):
        config = TrainConfig(total_epochs=8, warmup_epochs=2, batch_size=8,
                             search_frequency=3, seed=8)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        assert len(logs) == 8
        n_train = len(tiny_corpus.frames("train"))
        steps = n_train // config.batch_size
        expected = len([s for s in range(steps) if s % 3 == 0])
        for log in logs:
            if log.epoch <= config.warmup_epochs:
                assert log.policy_updates == 0
            else:
                assert log.policy_updates == expected

    def test_two_epoch_run_structure(self, tiny_corpus):
        config = TrainConfig(total_epochs=2, warmup_epochs=0, batch_size=8,
                             search_frequency=2, seed=9)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        assert len(logs) == 2
        assert logs[0].n_pfake == 0  # q(0) = 0

    def test_determinism_bit_exact(self, tiny_corpus):
        config = TrainConfig(total_epochs=3, warmup_epochs=1, batch_size=8,
                             search_frequency=2, seed=10)
        stores_a, logs_a = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        stores_b, logs_b = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        for name in ("alpha", "beta", "gamma"):
            assert stores_equal(stores_a[name], stores_b[name])
        for la, lb in zip(logs_a, logs_b):
            assert la.train_loss == lb.train_loss
            assert la.val_loss == lb.val_loss
            assert np.array_equal(la.policy, lb.policy)

    def test_variant2_structure(self, tiny_corpus):
        config = apply_variant(
            TrainConfig(total_epochs=2, warmup_epochs=0, batch_size=8, seed=11), "variant2"
        )
        assert not config.use_ofake and not config.use_mc and not config.use_dfs
        assert config.enabled_ops == ("sbi",)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        for log in logs:
            assert log.n_ofake == 0
            assert log.n_pfake == config.batch_size // 2
            assert np.allclose(log.policy, [0.0, 1.0, 0.0])

    def test_mc_composition_follows_plan(self, tiny_corpus):
        config = TrainConfig(total_epochs=4, warmup_epochs=1, batch_size=8,
                             search_frequency=2, seed=12)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        from cdfa.curriculum import CurriculumSchedule, plan_batch

        sched = CurriculumSchedule(4)
        for log in logs:
            plan = plan_batch(log.epoch, 8, sched)
            assert (log.n_ofake, log.n_pfake) == (plan.n_ofake, plan.n_pfake)

    def test_epoch_mean_policy_on_simplex(self, tiny_corpus):
        config = TrainConfig(total_epochs=3, warmup_epochs=0, batch_size=8,
                             search_frequency=2, seed=13)
        _, logs = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        for log in logs:
            assert abs(log.policy.sum() - 1.0) < 1e-6


class TestRunTraining:
    def test_run_dir_artifacts(self, tiny_corpus, tmp_path):
        config = TrainConfig(total_epochs=3, warmup_epochs=1, batch_size=8,
                             search_frequency=2, seed=14)
        run_dir = tmp_path / "run"
        stores, logs = run_training(run_dir, config, tiny_corpus, net_config=TINY_NET)
        csv_lines = (run_dir / "epochs.csv").read_text().strip().split("\n")
        assert csv_lines[0] == ",".join(EPOCH_CSV_HEADER)
        assert len(csv_lines) == 1 + 3
        assert (run_dir / "config.json").exists()
        for epoch in range(3):
            assert (run_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt").exists()
        loaded, meta = load_checkpoint(run_dir / "final.ckpt")
        assert meta["epoch"] == 2
        for name in ("alpha", "beta", "gamma"):
            assert all(np.array_equal(loaded[name][k], stores[name][k]) for k in stores[name].keys())

    def test_evaluate_frames_tag_filter(self, tiny_corpus, tmp_path):
        config = TrainConfig(total_epochs=2, warmup_epochs=0, batch_size=8,
                             search_frequency=2, seed=15)
        stores, _ = train_cdfa(config, tiny_corpus, net_config=TINY_NET)
        all_items = evaluate_frames(tiny_corpus, "test", stores["alpha"], stores["beta"])
        blur_items = evaluate_frames(tiny_corpus, "test", stores["alpha"], stores["beta"], tags=("blur",))
        assert len(blur_items) < len(all_items)
        blur_ids = {it.video_id for it in blur_items}
        for entry in tiny_corpus.entries(split="test", label="ofake"):
            if entry.manipulation_tag != "blur":
                assert entry.video_id not in blur_ids
