"""Walk through the blend-mask pipeline step by step.

Renders one synthetic face, then shows each stage of the mask construction:
convex hull of the 68 landmarks, vertex jitter, rasterization, Gaussian
softening, intensity scaling.  Writes a PNG contact sheet to
demos/out/blend_mask_pipeline.png.
"""

import os

import numpy as np
from PIL import Image

from cdfa.data import identity_params, landmark_points, render_frame
from cdfa.geometry import (
    MaskParams,
    convex_hull,
    deform_polygon,
    gaussian_blur,
    make_blend_mask,
    rasterize,
)

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")
SIZE = 64


def to_rgb(gray):
    return np.repeat(gray[:, :, None], 3, axis=2)


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    idp = identity_params(np.random.SeedSequence(4).spawn(1)[0], SIZE)
    face = render_frame(idp, 0, SIZE).astype(np.float64) / 255.0
    lm = landmark_points(idp, 0)

    hull = convex_hull(lm)
    print(f"hull has {len(hull)} vertices (from 68 landmarks)")

    rng = np.random.default_rng(7)
    deformed = deform_polygon(hull, rng, 4.0)
    hard = rasterize(deformed, SIZE, SIZE)
    soft = gaussian_blur(hard, 2.0)
    scaled = soft * 0.75

    # Full pipeline with one seeded stream, as the augmentation ops use it.
    mask = make_blend_mask(lm, SIZE, SIZE, np.random.default_rng(7), MaskParams())
    print(f"pipeline mask: max={mask.max():.2f} mean={mask.mean():.3f}")

    lm_overlay = face.copy()
    for x, y in np.round(lm).astype(int):
        lm_overlay[max(y, 0), max(x, 0)] = (1.0, 0.1, 0.1)

    panels = [face, lm_overlay, to_rgb(rasterize(hull, SIZE, SIZE)),
              to_rgb(hard), to_rgb(soft), to_rgb(scaled), to_rgb(mask)]
    sheet = np.concatenate(panels, axis=1)
    path = os.path.join(OUT_DIR, "blend_mask_pipeline.png")
    Image.fromarray(np.round(sheet * 255).astype(np.uint8), "RGB").save(path)
    print(f"wrote {path}")
    print("panels: face | landmarks | hull | deformed+rasterized | blurred | scaled | full pipeline")


if __name__ == "__main__":
    main()
