"""Full co-training loop: curriculum batches, alternating detector/policy
optimization with warm-up and search frequency, epoch logging, run output.

Each epoch runs ``floor(|D_tr| / b)`` detector steps; after the warm-up
epochs, every ``search_frequency``-th step additionally updates the policy
network on a search batch drawn from the validation reals, through the soft
operator mixture.  Variant flags switch off the curriculum, the policy
search, individual operators, or the stored fakes to mirror the ablation
matrix.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .augment import (
    AugContext,
    FaceFrame,
    OP_NAMES,
    apply_forgery_augmentation,
)
from .curriculum import (
    CurriculumSchedule,
    TrainingBatch,
    compose_batch,
    fixed_plan,
    plan_batch,
)
from .data import Corpus
from .errors import ConfigError, InsufficientDataError
from .geometry import MaskParams
from .augment import SbiParams
from .metrics import ScoredItem, write_csv
from .nets import (
    AdamState,
    NetConfig,
    ParamStore,
    SearchBatch,
    adam_step,
    backward_detector,
    backward_policy,
    bce_loss,
    classify,
    cosine_lr,
    features,
    init_classifier,
    init_extractor,
    init_policy,
    policy_head,
    save_checkpoint,
    soft_mixture_forward,
)

EPOCH_CSV_HEADER = ("epoch", "train_loss", "val_loss", "p_bi", "p_sbi", "p_ssbi", "n_of", "n_pf")

# The ablation variant matrix: fake-data composition x strategy toggles.
VARIANT_PRESETS: dict[str, dict] = {
    "variant1": dict(use_ofake=False, use_mc=False, use_dfs=False, enabled_ops=("bi",)),
    "variant2": dict(use_ofake=False, use_mc=False, use_dfs=False, enabled_ops=("sbi",)),
    "variant3": dict(use_ofake=False, use_mc=False, use_dfs=False, enabled_ops=("ssbi",)),
    "variant4": dict(use_ofake=False, use_mc=False, use_dfs=False, enabled_ops=OP_NAMES),
    "variant5": dict(use_ofake=False, use_mc=False, use_dfs=True, enabled_ops=OP_NAMES),
    "variant6": dict(use_ofake=True, use_mc=True, use_dfs=False, enabled_ops=("bi",)),
    "variant7": dict(use_ofake=True, use_mc=True, use_dfs=False, enabled_ops=("sbi",)),
    "variant8": dict(use_ofake=True, use_mc=True, use_dfs=False, enabled_ops=("ssbi",)),
    "variant9": dict(use_ofake=True, use_mc=True, use_dfs=False, enabled_ops=OP_NAMES),
    "variant10": dict(use_ofake=True, use_mc=False, use_dfs=False, enabled_ops=OP_NAMES),
    "variant11": dict(use_ofake=True, use_mc=False, use_dfs=True, enabled_ops=OP_NAMES),
    "cdfa": dict(use_ofake=True, use_mc=True, use_dfs=True, enabled_ops=OP_NAMES),
    # o-fake-only training, the naive-detector reference point.
    "baseline": dict(use_ofake=True, use_mc=False, use_dfs=False, enabled_ops=OP_NAMES,
                     fixed_pfake_fraction=0.0),
}


@dataclass
class TrainConfig:
    """Loop hyper-parameters plus the ablation variant flags."""

    total_epochs: int = 50
    warmup_epochs: int = 5
    batch_size: int = 64
    search_frequency: int = 10
    lr0: float = 1e-4
    seed: int = 0
    use_mc: bool = True
    use_dfs: bool = True
    enabled_ops: tuple[str, ...] = OP_NAMES
    use_ofake: bool = True
    fixed_pfake_fraction: float | None = None
    bi_pool_size: int = 100

    def __post_init__(self):
        self.enabled_ops = tuple(self.enabled_ops)
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs < total_epochs")
        if self.search_frequency < 1:
            raise ConfigError("search_frequency must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ConfigError("batch_size must be even and >= 2")
        if not self.enabled_ops:
            raise ConfigError("enabled_ops must be non-empty")
        for name in self.enabled_ops:
            if name not in OP_NAMES:
                raise ConfigError(f"unknown op {name!r}; expected subset of {OP_NAMES}")
        if self.use_mc and not self.use_ofake:
            raise ConfigError("the curriculum schedules o-fakes; use_mc requires use_ofake")
        if self.use_mc and self.fixed_pfake_fraction is not None:
            raise ConfigError("fixed_pfake_fraction only applies when use_mc is off")
        if self.fixed_pfake_fraction is not None and not 0.0 <= self.fixed_pfake_fraction <= 1.0:
            raise ConfigError("fixed_pfake_fraction must lie in [0, 1]")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.bi_pool_size < 1:
            raise ConfigError("bi_pool_size must be >= 1")

    def resolved_pfake_fraction(self) -> float:
        """P-fake share of the fake half for curriculum-free runs."""
        if self.fixed_pfake_fraction is not None:
            return self.fixed_pfake_fraction
        return 1.0 if not self.use_ofake else 0.5

    def op_mask(self) -> np.ndarray:
        return np.array([name in self.enabled_ops for name in OP_NAMES], dtype=bool)


def apply_variant(config: TrainConfig, name: str) -> TrainConfig:
    """Return a copy of ``config`` with one named variant preset applied."""
    if name not in VARIANT_PRESETS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANT_PRESETS)}")
    fields = asdict(config)
    fields["fixed_pfake_fraction"] = None
    fields.update(VARIANT_PRESETS[name])
    return TrainConfig(**fields)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    policy: np.ndarray           # epoch-mean (p_bi, p_sbi, p_ssbi)
    n_ofake: int
    n_pfake: int
    policy_updates: int = 0

    def csv_row(self) -> tuple:
        return (
            self.epoch,
            float(self.train_loss),
            float(self.val_loss),
            float(self.policy[0]),
            float(self.policy[1]),
            float(self.policy[2]),
            self.n_ofake,
            self.n_pfake,
        )


@dataclass
class TrainState:
    epoch: int
    global_step: int
    alpha: ParamStore
    beta: ParamStore
    gamma: ParamStore
    adam_alpha: AdamState
    adam_beta: AdamState
    adam_gamma: AdamState
    rng: np.random.Generator


def init_state(config: TrainConfig, net_config: NetConfig, seed_seq: np.random.SeedSequence | None = None) -> TrainState:
    """Fresh parameter stores, optimizer states, and training stream."""
    ss = seed_seq if seed_seq is not None else np.random.SeedSequence(config.seed)
    init_seed, train_seed = ss.spawn(2)
    init_rng = np.random.default_rng(init_seed)
    alpha = init_extractor(net_config, init_rng)
    beta = init_classifier(net_config, init_rng)
    gamma = init_policy(net_config, init_rng)
    return TrainState(
        epoch=0,
        global_step=0,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        adam_alpha=AdamState.for_params(alpha),
        adam_beta=AdamState.for_params(beta),
        adam_gamma=AdamState.for_params(gamma),
        rng=np.random.default_rng(train_seed),
    )


def detector_phase_step(state: TrainState, batch: TrainingBatch, config: TrainConfig) -> float:
    """One Adam step on the detector (alpha, beta); gamma is untouched."""
    loss, grads_alpha, grads_beta = backward_detector(
        batch.images(), batch.labels(), state.alpha, state.beta
    )
    lr = cosine_lr(state.epoch, config.total_epochs, config.lr0)
    adam_step(state.alpha, grads_alpha, state.adam_alpha, lr)
    adam_step(state.beta, grads_beta, state.adam_beta, lr)
    state.global_step += 1
    return loss


def build_search_batch(
    state: TrainState,
    config: TrainConfig,
    search_pool: Sequence[FaceFrame],
    context: AugContext,
) -> SearchBatch:
    """Draw b/2 validation reals and pair each with its soft pseudo-fake.

    The resulting batch holds exactly b items: the reals (labeled real) and
    one soft-mixture pseudo-fake per real (labeled fake).
    """
    need = config.batch_size // 2
    if len(search_pool) < need:
        raise InsufficientDataError(
            f"search pool has {len(search_pool)} frames, policy phase needs {need}"
        )
    mask = config.op_mask()
    idx = state.rng.choice(len(search_pool), size=need, replace=False)
    chosen = [search_pool[int(i)] for i in idx]
    caches = []
    for frame in chosen:
        _, cache = soft_mixture_forward(
            frame, context, state.alpha, state.beta, state.gamma, state.rng, op_mask=mask
        )
        caches.append(cache)
    return SearchBatch(real_images=np.stack([f.image for f in chosen]), pfake_caches=caches)


def policy_phase_step(
    state: TrainState,
    config: TrainConfig,
    search_pool: Sequence[FaceFrame],
    context: AugContext,
) -> float:
    """One Adam step on gamma over a validation search batch.

    The detector parameters are frozen; only the policy MLP moves.
    """
    batch = build_search_batch(state, config, search_pool, context)
    loss, grads_gamma = backward_policy(batch, state.alpha, state.beta, state.gamma)
    lr = cosine_lr(state.epoch, config.total_epochs, config.lr0)
    adam_step(state.gamma, grads_gamma, state.adam_gamma, lr)
    return loss


def _uniform_policy(mask: np.ndarray) -> np.ndarray:
    return mask.astype(np.float64) / mask.sum()


def _mean_bce(images: np.ndarray, labels: np.ndarray, alpha: ParamStore, beta: ParamStore,
              chunk: int = 256) -> float:
    losses = []
    for lo in range(0, images.shape[0], chunk):
        pred = classify(features(images[lo : lo + chunk], alpha), beta)
        y = labels[lo : lo + chunk]
        losses.append(bce_loss(pred, y) * len(y))
    return float(np.sum(losses) / images.shape[0])


def train_cdfa(
    config: TrainConfig,
    corpus: Corpus,
    train_split: str = "train",
    val_split: str = "val",
    *,
    net_config: NetConfig | None = None,
    mask_params: MaskParams | None = None,
    sbi_params: SbiParams | None = None,
    on_epoch: Callable[[EpochLog, TrainState], None] | None = None,
) -> tuple[dict[str, ParamStore], list[EpochLog]]:
    """Run the full co-training loop; fully deterministic for a fixed seed.

    Returns the trained parameter stores and one log per epoch.  The
    ``on_epoch`` callback fires after each epoch with the log and the live
    state (used for CSV/checkpoint persistence).
    """
    net_config = net_config or NetConfig()
    mask_params = mask_params or MaskParams()
    sbi_params = sbi_params or SbiParams()
    schedule = CurriculumSchedule(config.total_epochs)
    op_mask = config.op_mask()

    train_real = corpus.frames(train_split, label="real")
    train_ofake = corpus.frames(train_split, label="ofake")
    if not train_real:
        raise InsufficientDataError(f"no real frames in split {train_split!r}")
    if config.use_ofake and not train_ofake:
        raise InsufficientDataError(f"no o-fake frames in split {train_split!r}")
    steps_per_epoch = (len(train_real) + len(train_ofake)) // config.batch_size
    if steps_per_epoch < 1:
        raise InsufficientDataError("training split smaller than one batch")

    # Validation reals are split into disjoint slices: even-indexed videos
    # feed the policy search, odd-indexed ones the validation-loss probe.
    val_real_entries = corpus.entries(split=val_split, label="real")
    if not val_real_entries:
        raise InsufficientDataError(f"no real videos in split {val_split!r}")
    search_entries = val_real_entries[::2]
    probe_entries = val_real_entries[1::2] or search_entries
    if config.use_dfs and not search_entries:
        raise InsufficientDataError("policy search needs real validation videos")
    search_pool = [f for e in search_entries for f in corpus.clip(e.video_id).frames]
    probe_reals = [f for e in probe_entries for f in corpus.clip(e.video_id).frames]

    context = AugContext(
        real_frames=train_real,
        videos={**corpus.videos_by_id(train_split, label="real"),
                **corpus.videos_by_id(val_split, label="real")},
        mask_params=mask_params,
        sbi_params=sbi_params,
        bi_pool_size=config.bi_pool_size,
    )

    ss = np.random.SeedSequence(config.seed)
    state_ss, val_ss = ss.spawn(2)
    state = init_state(config, net_config, state_ss)
    val_images, val_labels = _build_val_loss_set(
        corpus, val_split, probe_reals, context, op_mask, np.random.default_rng(val_ss)
    )

    def query_policy(frame: FaceFrame) -> np.ndarray:
        if config.use_dfs:
            return policy_head(features(frame.image, state.alpha), state.gamma, op_mask)
        return _uniform_policy(op_mask)

    logs: list[EpochLog] = []
    for t in range(config.total_epochs):
        state.epoch = t
        plan = (
            plan_batch(t, config.batch_size, schedule)
            if config.use_mc
            else fixed_plan(config.resolved_pfake_fraction(), config.batch_size)
        )
        epoch_policies: list[np.ndarray] = []

        def recording_policy_source(frame: FaceFrame) -> np.ndarray:
            p = query_policy(frame)
            epoch_policies.append(p)
            return p

        step_losses = []
        policy_updates = 0
        for step in range(steps_per_epoch):
            batch = compose_batch(
                plan, train_real, train_ofake, recording_policy_source, context, state.rng
            )
            step_losses.append(detector_phase_step(state, batch, config))
            if config.use_dfs and t > config.warmup_epochs and step % config.search_frequency == 0:
                policy_phase_step(state, config, search_pool, context)
                policy_updates += 1

        if epoch_policies:
            mean_policy = np.mean(epoch_policies, axis=0)
        else:
            # No p-fakes were generated this epoch; probe the current policy
            # on a fixed prefix of the training reals for the log.
            mean_policy = np.mean([query_policy(f) for f in train_real[:8]], axis=0)
        log = EpochLog(
            epoch=t,
            train_loss=float(np.mean(step_losses)),
            val_loss=_mean_bce(val_images, val_labels, state.alpha, state.beta),
            policy=mean_policy,
            n_ofake=plan.n_ofake,
            n_pfake=plan.n_pfake,
            policy_updates=policy_updates,
        )
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log, state)

    stores = {"alpha": state.alpha, "beta": state.beta, "gamma": state.gamma}
    return stores, logs


def _build_val_loss_set(
    corpus: Corpus,
    val_split: str,
    probe_reals: Sequence[FaceFrame],
    context: AugContext,
    op_mask: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed held-out set for the per-epoch validation loss.

    Real frames from the probe slice (label real), the split's o-fakes
    (label fake), and one hard-sampled pseudo-fake per probe real under a
    uniform policy (label fake), all frozen at startup.
    """
    uniform = _uniform_policy(op_mask)
    images = [f.image for f in probe_reals]
    labels = [0.0] * len(probe_reals)
    for f in corpus.frames(val_split, label="ofake"):
        images.append(f.image)
        labels.append(1.0)
    for f in probe_reals:
        pf = apply_forgery_augmentation(f, uniform, context, rng)
        images.append(pf.image)
        labels.append(1.0)
    return np.stack(images), np.array(labels)


def evaluate_frames(
    corpus: Corpus,
    split: str,
    alpha: ParamStore,
    beta: ParamStore,
    chunk: int = 256,
    tags: Sequence[str] | None = None,
) -> list[ScoredItem]:
    """Score a split's frames with the detector; score = P(fake).

    With ``tags``, fake clips are restricted to those manipulation tags
    (reals are always kept), which gives the cross-manipulation protocol:
    reals versus one held-out manipulation.
    """
    frames: list[FaceFrame] = []
    labels: list[int] = []
    for entry in corpus.entries(split=split):
        if entry.source_label != "real" and tags is not None and entry.manipulation_tag not in tags:
            continue
        clip = corpus.clip(entry.video_id)
        for f in clip.frames:
            frames.append(f)
            labels.append(0 if entry.source_label == "real" else 1)
    if not frames:
        raise InsufficientDataError(f"split {split!r} is empty")
    items: list[ScoredItem] = []
    for lo in range(0, len(frames), chunk):
        batch = np.stack([f.image for f in frames[lo : lo + chunk]])
        probs = np.atleast_1d(classify(features(batch, alpha), beta).probability)
        for f, y, p in zip(frames[lo : lo + chunk], labels[lo : lo + chunk], probs):
            items.append(ScoredItem(float(p), y, f.video_id, f.frame_index))
    return items


# ---------------------------------------------------------------------------
# Run directory persistence
# ---------------------------------------------------------------------------

def run_training(
    run_dir,
    config: TrainConfig,
    corpus: Corpus,
    *,
    net_config: NetConfig | None = None,
    mask_params: MaskParams | None = None,
    sbi_params: SbiParams | None = None,
    config_snapshot: dict | None = None,
    checkpoint_every: int = 1,
    train_split: str = "train",
    val_split: str = "val",
) -> tuple[dict[str, ParamStore], list[EpochLog]]:
    """Train and persist: config snapshot, per-epoch CSV, checkpoints.

    The CSV gains one flushed row per completed epoch and checkpoints are
    written atomically, so an interrupted run keeps its last completed
    epoch intact.
    """
    run_dir = str(run_dir)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    snapshot = config_snapshot or {"train": asdict(config)}
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)

    csv_path = os.path.join(run_dir, "epochs.csv")
    csv_fh = open(csv_path, "w", newline="")
    csv_fh.write(",".join(EPOCH_CSV_HEADER) + "\n")
    csv_fh.flush()

    def persist(log: EpochLog, state: TrainState) -> None:
        csv_fh.write(",".join(repr(c) if isinstance(c, float) else str(c) for c in log.csv_row()) + "\n")
        csv_fh.flush()
        os.fsync(csv_fh.fileno())
        if checkpoint_every > 0 and (log.epoch % checkpoint_every == 0 or log.epoch == config.total_epochs - 1):
            save_checkpoint(
                os.path.join(ckpt_dir, f"epoch_{log.epoch:04d}.ckpt"),
                {"alpha": state.alpha, "beta": state.beta, "gamma": state.gamma},
                meta={"epoch": log.epoch},
            )

    try:
        stores, logs = train_cdfa(
            config,
            corpus,
            train_split,
            val_split,
            net_config=net_config,
            mask_params=mask_params,
            sbi_params=sbi_params,
            on_epoch=persist,
        )
    finally:
        csv_fh.close()
    save_checkpoint(
        os.path.join(run_dir, "final.ckpt"),
        stores,
        meta={"epoch": config.total_epochs - 1},
    )
    return stores, logs
