"""Blend-based forgery augmentation toolkit.

A numpy library for training small face-forgery detectors with on-the-fly
pseudo-fake samples: landmark-driven blend masks, three blending operators,
a monotonic curriculum over the pseudo-fake share of each batch, and a
policy network co-trained through a soft operator mixture to pick the
operator per sample.
"""

from .augment import (
    AugContext,
    AugOp,
    FaceFrame,
    PseudoFake,
    SbiParams,
    apply_forgery_augmentation,
    blend,
    op_bi,
    op_sbi,
    op_ssbi,
)
from .curriculum import BatchPlan, CurriculumSchedule, compose_batch, plan_batch, schedule_q
from .data import Corpus, SynthConfig, generate_synthetic_corpus, load_corpus, sample_ofake, sample_real
from .geometry import MaskParams, convex_hull, deform_polygon, gaussian_blur, make_blend_mask, rasterize
from .metrics import ScoredItem, auc, policy_evolution, video_level_scores
from .nets import (
    AdamState,
    NetConfig,
    ParamStore,
    Prediction,
    adam_step,
    backward_detector,
    backward_policy,
    bce_loss,
    classify,
    cosine_lr,
    features,
    load_checkpoint,
    policy_head,
    save_checkpoint,
    soft_mixture_forward,
)
from .trainer import (
    EpochLog,
    TrainConfig,
    apply_variant,
    detector_phase_step,
    evaluate_frames,
    policy_phase_step,
    run_training,
    train_cdfa,
)

__version__ = "0.1.0"
