"""Preview the three forgery operators on one synthetic corpus frame.

Generates a small corpus, picks a source frame, and realizes each operator
once with shared stream derivation (the same mechanism training uses), then
saves source / target-blend / mask panels per operator.
"""

import os
import tempfile

import numpy as np
from PIL import Image

from cdfa.augment import OPS, AugContext, operator_streams, realize_operator
from cdfa.data import SynthConfig, generate_synthetic_corpus, load_corpus

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        root = os.path.join(tmp, "corpus")
        generate_synthetic_corpus(
            SynthConfig(n_identities=8, frames_per_video=12, image_size=64, seed=1), root
        )
        corpus = load_corpus(root)
        reals = corpus.frames("train", label="real")
        ctx = AugContext(
            real_frames=reals,
            videos=corpus.videos_by_id("train", label="real"),
        )
        src = reals[5]
        print(f"source: {src.video_id} frame {src.frame_index}")

        rows = []
        streams = operator_streams(np.random.default_rng(11))
        for op in OPS:
            pfake = realize_operator(op, src, ctx, streams[op.index])
            diff = np.abs(pfake.image - src.image).mean()
            print(f"{op.name}: mean |pfake - source| = {diff:.4f}, mask peak = {pfake.mask.max():.2f}")
            mask_rgb = np.repeat(pfake.mask[:, :, None], 3, axis=2)
            rows.append(np.concatenate([src.image, pfake.image, mask_rgb], axis=1))

        sheet = np.concatenate(rows, axis=0)
        path = os.path.join(OUT_DIR, "forgery_operators.png")
        Image.fromarray(np.round(sheet * 255).astype(np.uint8), "RGB").save(path)
        print(f"wrote {path} (rows: BI / SBI / SSBI; columns: source | pseudo-fake | mask)")


if __name__ == "__main__":
    main()
