"""End-to-end mini experiment: curriculum plus policy search on a tiny corpus.

Trains the full pipeline for a few minutes at desk scale, prints the epoch
log as it goes, then evaluates held-out-manipulation AUC and emits the loss
and policy-evolution charts.  A good first stop to see the whole toolkit in
motion; the CLI wraps exactly this flow.
"""

import os
import tempfile

import numpy as np

from cdfa.augment import SbiParams
from cdfa.data import SynthConfig, generate_synthetic_corpus, load_corpus
from cdfa.geometry import MaskParams
from cdfa.metrics import auc, policy_evolution, video_level_scores
from cdfa.nets import NetConfig
from cdfa.plots import line_chart_svg
from cdfa.trainer import TrainConfig, evaluate_frames, train_cdfa

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        root = os.path.join(tmp, "corpus")
        synth = SynthConfig(n_identities=14, frames_per_video=8, image_size=32, seed=0)
        generate_synthetic_corpus(synth, root)
        corpus = load_corpus(root)

        config = TrainConfig(
            total_epochs=24,
            warmup_epochs=2,
            batch_size=16,
            search_frequency=2,
            lr0=3e-3,
            seed=1,
        )
        net = NetConfig(conv_channels=(8, 16, 32), feature_dim=32, policy_hidden=(32, 16))
        mask = MaskParams(blur_sigma_range=(0.3, 1.2), intensity_levels=(0.75, 1.0))
        sbi = SbiParams(brightness=0.2, shift=0.1, resize=0.5)

        def report(log, state):
            print(
                f"epoch {log.epoch:2d}  train {log.train_loss:.3f}  val {log.val_loss:.3f}  "
                f"policy {np.round(log.policy, 2)}  n_of={log.n_ofake} n_pf={log.n_pfake}"
            )

        stores, logs = train_cdfa(
            config, corpus, net_config=net, mask_params=mask, sbi_params=sbi, on_epoch=report
        )

        items = evaluate_frames(corpus, "test", stores["alpha"], stores["beta"],
                                tags=(synth.held_out,))
        print(f"\nheld-out ({synth.held_out}) video AUC: {auc(video_level_scores(items)):.3f}")

        rows = policy_evolution(logs)
        epochs = rows[:, 0].tolist()
        line_chart_svg(
            os.path.join(OUT_DIR, "mini_policy_evolution.svg"),
            epochs,
            {"p_bi": rows[:, 1], "p_sbi": rows[:, 2], "p_ssbi": rows[:, 3]},
            title="Mini run: policy evolution",
            x_label="epoch",
            y_label="probability",
            y_range=(0.0, 1.0),
        )
        line_chart_svg(
            os.path.join(OUT_DIR, "mini_losses.svg"),
            epochs,
            {"train": [l.train_loss for l in logs], "val": [l.val_loss for l in logs]},
            title="Mini run: losses",
            x_label="epoch",
            y_label="mean BCE",
        )
        print(f"wrote {OUT_DIR}/mini_policy_evolution.svg and mini_losses.svg")


if __name__ == "__main__":
    main()
