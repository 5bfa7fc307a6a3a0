"""Command-line entry points: gen-data, augment, train, eval, plot.

Every command prints its resolved configuration header, is deterministic
given (config, seed), and never mutates its input corpus.  Exit codes:
0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

import numpy as np
from PIL import Image

from . import config as config_mod
from .augment import (
    AugContext,
    FaceFrame,
    OP_NAMES,
    apply_forgery_augmentation,
    op_from_name,
    operator_streams,
    realize_operator,
)
from .data import generate_synthetic_corpus, load_corpus
from .errors import (
    CdfaError,
    ConfigError,
    DataIntegrityError,
    InsufficientDataError,
)
from .metrics import auc, video_level_scores, write_csv
from .nets import features, load_checkpoint, policy_head
from .plots import plot_run
from .trainer import apply_variant, evaluate_frames, run_training, VARIANT_PRESETS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdfa",
        description="Forgery-augmentation training toolkit: synthetic corpus generation, "
        "pseudo-fake previews, curriculum + policy-search training, evaluation, plots.",
        epilog="Config files are JSON with sections train/synth/mask/sbi/net; "
        "defaults: " + json.dumps(config_mod.default_config_doc()),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (partial; merged over defaults)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable; highest precedence with flags)",
    )
    common.add_argument("--seed", type=int, help="override the seed (train and synth sections)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads (default: all cores)")

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus output directory")

    p = sub.add_parser("augment", parents=[common], help="write pseudo-fake previews and masks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--op", required=True, choices=(*OP_NAMES, "policy"))
    p.add_argument(
        "--frames",
        required=True,
        action="append",
        metavar="VIDEO_ID[:INDEX]",
        help="frame selector; a bare video id selects all its frames (repeatable)",
    )
    p.add_argument("--out", required=True, help="preview output directory")
    p.add_argument("--checkpoint", help="with --op policy: draw per-frame policies from this checkpoint")

    p = sub.add_parser("train", parents=[common], help="run a training experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--variant", choices=sorted(VARIANT_PRESETS), help="apply a named ablation preset")
    p.add_argument("--checkpoint-every", type=int, default=1, help="epochs between periodic checkpoints")

    p = sub.add_parser("eval", parents=[common], help="score a split and report frame/video AUC")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument(
        "--tag",
        action="append",
        dest="tags",
        help="restrict fakes to these manipulation tags (repeatable); reals always kept",
    )
    p.add_argument("--out", help="CSV path for per-frame and per-video scores")

    p = sub.add_parser("plot", parents=[common], help="emit SVG charts for a finished run")
    p.add_argument("--run-dir", required=True)

    return parser


def _resolve(args) -> tuple[config_mod.RunConfig, dict]:
    cli_doc: dict = {}
    if getattr(args, "seed", None) is not None:
        cli_doc = {"train": {"seed": args.seed}, "synth": {"seed": args.seed}}
    run_config, provenance = config_mod.resolve_config(
        config_path=getattr(args, "config", None),
        set_overrides=getattr(args, "overrides", None),
        cli_overrides=cli_doc,
    )
    return run_config, provenance


def _log_header(command: str, run_config: config_mod.RunConfig, provenance: dict) -> None:
    print(f"cdfa {command}")
    print("config provenance: " + json.dumps(provenance, sort_keys=True))
    print("resolved config: " + json.dumps(run_config.as_doc(), sort_keys=True))


@contextlib.contextmanager
def _thread_cap(threads):
    if threads is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=threads):
        yield


def cmd_gen_data(args) -> int:
    run_config, provenance = _resolve(args)
    _log_header("gen-data", run_config, provenance)
    manifest = generate_synthetic_corpus(run_config.synth, args.out)
    print(f"wrote {len(manifest.videos)} clips under {args.out}")
    return EXIT_OK


def _to_png(path, array: np.ndarray) -> None:
    arr8 = np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "RGB" if arr8.ndim == 3 else "L"
    Image.fromarray(arr8, mode).save(path, format="PNG")


def _select_frames(corpus, selectors) -> list[FaceFrame]:
    frames: list[FaceFrame] = []
    for selector in selectors:
        video_id, _, idx = selector.partition(":")
        clip = corpus.clip(video_id)
        if idx:
            i = int(idx)
            if not 0 <= i < len(clip.frames):
                raise InsufficientDataError(f"{video_id!r} has no frame {i}")
            frames.append(clip.frames[i])
        else:
            frames.extend(clip.frames)
    return frames


def cmd_augment(args) -> int:
    run_config, provenance = _resolve(args)
    _log_header("augment", run_config, provenance)
    corpus = load_corpus(args.corpus)
    frames = _select_frames(corpus, args.frames)
    all_reals = [f for e in corpus.entries(label="real") for f in corpus.clip(e.video_id).frames]
    context = AugContext(
        real_frames=all_reals,
        videos={e.video_id: corpus.clip(e.video_id).frames for e in corpus.manifest.videos},
        mask_params=run_config.mask,
        sbi_params=run_config.sbi,
        bi_pool_size=run_config.train.bi_pool_size,
    )
    policy_nets = None
    if args.op == "policy" and args.checkpoint:
        stores, _ = load_checkpoint(args.checkpoint)
        policy_nets = (stores["alpha"], stores["gamma"])

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(run_config.train.seed)
    uniform = np.full(3, 1.0, dtype=np.float64) / 3.0
    for frame in frames:
        stem = f"{frame.video_id}_{frame.frame_index:04d}_{args.op}"
        if args.op == "policy":
            if policy_nets is not None:
                alpha, gamma = policy_nets
                policy = policy_head(features(frame.image, alpha), gamma)
            else:
                policy = uniform
            pfake = apply_forgery_augmentation(frame, policy, context, rng)
        else:
            op = op_from_name(args.op)
            streams = operator_streams(rng)
            pfake = realize_operator(op, frame, context, streams[op.index])
        _to_png(os.path.join(args.out, stem + ".png"), pfake.image)
        _to_png(os.path.join(args.out, stem + "_mask.png"), pfake.mask)
        print(f"wrote {stem}.png (+mask), op={pfake.chosen_op.name}")
    return EXIT_OK


def cmd_train(args) -> int:
    run_config, provenance = _resolve(args)
    train_config = run_config.train
    if args.variant:
        train_config = apply_variant(train_config, args.variant)
        provenance["variant"] = args.variant
    run_config = config_mod.RunConfig(
        train=train_config, synth=run_config.synth, mask=run_config.mask,
        sbi=run_config.sbi, net=run_config.net,
    )
    _log_header("train", run_config, provenance)
    corpus = load_corpus(args.corpus)
    snapshot = dict(run_config.as_doc())
    snapshot["provenance"] = provenance
    _, logs = run_training(
        args.out,
        train_config,
        corpus,
        net_config=run_config.net,
        mask_params=run_config.mask,
        sbi_params=run_config.sbi,
        config_snapshot=snapshot,
        checkpoint_every=args.checkpoint_every,
    )
    print(f"finished {len(logs)} epochs; run dir: {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_config, provenance = _resolve(args)
    _log_header("eval", run_config, provenance)
    stores, meta = load_checkpoint(args.checkpoint)
    if "alpha" not in stores or "beta" not in stores:
        raise DataIntegrityError(f"checkpoint {args.checkpoint} lacks detector parameters")
    corpus = load_corpus(args.corpus)
    frame_items = evaluate_frames(corpus, args.split, stores["alpha"], stores["beta"], tags=args.tags)
    video_items = video_level_scores(frame_items)
    frame_auc = auc(frame_items)
    video_auc = auc(video_items)
    scope = f" tags={args.tags}" if args.tags else ""
    print(f"split={args.split}{scope} frames={len(frame_items)} videos={len(video_items)}")
    print(f"frame_auc={frame_auc:.6f}")
    print(f"video_auc={video_auc:.6f}")
    if args.out:
        rows = [("frame", it.video_id, it.frame_index, it.label, it.score) for it in frame_items]
        rows += [("video", it.video_id, it.frame_index, it.label, it.score) for it in video_items]
        write_csv(args.out, ("level", "video_id", "frame_index", "label", "score"), rows)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    paths = plot_run(args.run_dir)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        with _thread_cap(getattr(args, "threads", None)):
            return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InsufficientDataError, DataIntegrityError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CdfaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
