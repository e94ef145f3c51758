"""Generating stereo pairs with exact ground truth, and degrading one view.

Walks through the procedural scene generator: layered analytic textures give
a left view, a right view shifted by each layer's disparity, an exact
disparity map, and an occlusion-aware validity mask.  The right view is then
degraded (grayscale + bilinear downsampling) the way an asymmetric camera
rig would see it.
"""
from pathlib import Path

import numpy as np

from asymstereo import DegradationSpec, SceneParams, make_synthetic_pair
from asymstereo.data import degrade_left_for_corr, upsample_right_for_cat
from asymstereo.stereo_io import (save_sample, write_disparity_png16,
                                  write_image, write_pfm)

OUT = Path(__file__).parent / "output" / "01_data"
OUT.mkdir(parents=True, exist_ok=True)

params = SceneParams(height=128, width=256, d_max=64, shape_count=5,
                     texture_scale=10.0)
spec = DegradationSpec(downsample_factor=4, grayscale=True)
sample = make_synthetic_pair(seed=7, params=params, spec=spec)

print(f"left view:        {sample.left.shape}, values in "
      f"[{sample.left.min():.2f}, {sample.left.max():.2f}]")
print(f"right (degraded): {sample.right.shape}  <- 1/{spec.downsample_factor} "
      f"resolution, grayscale")
print(f"disparity range:  [{sample.gt_disparity.min():.2f}, "
      f"{sample.gt_disparity.max():.2f}] px")
print(f"valid pixels:     {sample.valid_mask.mean():.1%} "
      f"(occlusions and out-of-frame excluded)")

write_image(OUT / "left.png", sample.left)
write_image(OUT / "right_pristine.png", sample.right_pristine)
write_image(OUT / "right_degraded.png", sample.right)
write_pfm(OUT / "disp.pfm", sample.gt_disparity)
write_disparity_png16(OUT / "disp16.png", sample.gt_disparity,
                      sample.valid_mask)
write_image(OUT / "mask.png", sample.valid_mask.astype(float))

# The ground truth is exact: warping the pristine right view back onto the
# left grid reproduces the left view at every valid pixel.
y, x = np.mgrid[0:sample.height, 0:sample.width].astype(float)
from asymstereo.data import render_view
warped, _ = render_view(sample.scene, x - sample.gt_disparity, y, "right")
err = np.abs(warped - sample.left).max(axis=2)[sample.valid_mask]
print(f"warp consistency: max |left - warped right| = {err.max():.2e}")

# The alignment views the matcher actually consumes:
left_matched = degrade_left_for_corr(sample.left, spec)
right_up = upsample_right_for_cat(sample.right, spec)
write_image(OUT / "left_degraded_for_matching.png", left_matched)
write_image(OUT / "right_upsampled.png", right_up)
print(f"matching views:   left' {left_matched.shape}, right-up {right_up.shape}")

# Dataset layout round trip
save_sample(OUT / "dataset", "demo", "0000", sample)
print(f"sample saved under {OUT / 'dataset' / 'demo' / '0000'}")
print(f"artifacts in {OUT}")
