"""Render one synthetic scene under every weather condition.

Generates a small desk-scale world, renders the same camera pose under
each weather tag, and writes a contact sheet plus the landmark mask so
you can see what the pose regressor is actually looking at.

Run:  python3 demos/01_weather_gallery.py
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from radaug.core import WeatherTag, WEATHER_ORDER
from radaug.synth import (DEFAULT_WEATHER, SceneSpec, TrajectorySpec,
                          generate_dataset, generate_scene, render_frame,
                          trajectory_poses, weather_segments)

out_dir = os.path.join(os.path.dirname(__file__), "out", "weather_gallery")
os.makedirs(out_dir, exist_ok=True)

# A scene spec is the entire world recipe: same seed, same world, bit for bit.
spec = SceneSpec(seed=42, num_landmarks=14, trajectory_len=24,
                 image_dims=(96, 96, 3))
scene = generate_scene(spec)
poses = trajectory_poses(spec, TrajectorySpec())
print(f"scene has {len(scene.boxes)} landmark boxes, "
      f"{len(poses)} camera poses on the loop")

# Render the same pose under all five weather tags. The geometry (pose and
# landmark mask) must be identical across weathers; only pixels change.
pose = poses[5]
fig, axes = plt.subplots(1, len(WEATHER_ORDER) + 1, figsize=(3 * 6, 3.2))
mask_ref = None
for ax, tag in zip(axes, WEATHER_ORDER):
    sample, mask = render_frame(scene, pose, DEFAULT_WEATHER[tag], frame_index=5)
    if mask_ref is None:
        mask_ref = mask.mask
    assert np.array_equal(mask.mask, mask_ref), "mask must not depend on weather"
    ax.imshow(sample.pixels.astype(np.uint8))
    ax.set_title(tag.value, fontsize=9)
    ax.axis("off")
axes[-1].imshow(mask_ref, cmap="gray")
axes[-1].set_title("landmark mask", fontsize=9)
axes[-1].axis("off")
sheet = os.path.join(out_dir, "contact_sheet.png")
fig.tight_layout()
fig.savefig(sheet, dpi=110)
plt.close(fig)
print(f"contact sheet -> {sheet}")
print(f"landmark pixels cover {mask_ref.mean():.1%} of the frame")

# Weather along a trajectory comes in contiguous segments, like a real drive
# that passes from overcast into rain, not i.i.d. coin flips per frame.
mix = {WeatherTag.OVERCAST: 0.5, WeatherTag.RAIN: 0.3, WeatherTag.SNOW: 0.2}
tags = weather_segments(mix, 24)
print("segment layout:", " ".join(t.value[:2] for t in tags))

# generate_dataset bundles all of the above: rendered tuples of consecutive
# frames, ground-truth poses, masks, and the full recipe in the metadata.
ds = generate_dataset(spec, TrajectorySpec(), mix, tuple_len=3)
print(f"dataset: {len(ds.frames())} frames in {len(ds.tuples)} tuples, "
      f"dims {ds.dims}")
counts = {}
for frame in ds.frames():
    counts[frame.weather_tag.value] = counts.get(frame.weather_tag.value, 0) + 1
print("frames per weather:", counts)
