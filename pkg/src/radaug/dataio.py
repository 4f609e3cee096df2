"""On-disk dataset layout: manifest + PNG frames + poses.csv + 1-bit masks.

Layout of a dataset directory:

  manifest.json           specs, seed, dims, tuple index table, frame tags
  frames/frame_00000.png  one 8-bit lossless image per frame
  poses.csv               frame_index, t1..t3, w1..w3, weather_tag
  masks/mask_00000.png    1-bit landmark masks

Pixels leave the renderer as integer-valued floats in [0,255], so the
8-bit files round-trip them exactly; pose floats are written with repr,
which is also lossless.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict

import numpy as np
from PIL import Image

from .core import Dataset, ImageSample, Pose, SampleTuple, WeatherTag
from .synth import LandmarkMask, SceneSpec, TrajectorySpec

MANIFEST_NAME = "manifest.json"
POSES_NAME = "poses.csv"
FRAME_TEMPLATE = "frames/frame_{:05d}.png"
MASK_TEMPLATE = "masks/mask_{:05d}.png"

POSES_HEADER = ["frame_index", "t1", "t2", "t3", "w1", "w2", "w3", "weather_tag"]


def _spec_to_dict(spec) -> dict:
    d = asdict(spec)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write the directory layout above; out_dir is created if missing."""
    frames = dataset.frames()
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    masks = dataset.metadata.get("masks", {})
    if masks:
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

    for s in frames:
        px = s.pixels
        if not np.array_equal(px, np.rint(px)) or px.min() < 0 or px.max() > 255:
            raise ValueError(f"frame {s.frame_index} is not 8-bit representable; "
                             "only integer-valued pixels in [0,255] can be saved")
        Image.fromarray(px.astype(np.uint8)).save(
            os.path.join(out_dir, FRAME_TEMPLATE.format(s.frame_index)))

    for idx, m in sorted(masks.items()):
        img = Image.fromarray(m.mask.astype(np.uint8) * 255, mode="L").convert("1")
        img.save(os.path.join(out_dir, MASK_TEMPLATE.format(idx)))

    with open(os.path.join(out_dir, POSES_NAME), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(POSES_HEADER)
        for s in frames:
            writer.writerow([s.frame_index,
                             *[repr(float(v)) for v in s.pose.t],
                             *[repr(float(v)) for v in s.pose.w],
                             s.weather_tag.value])

    meta = dataset.metadata
    manifest = {
        "dims": list(dataset.dims),
        "n_frames": len(frames),
        "tuple_len": meta.get("tuple_len"),
        "phase_seed": meta.get("phase_seed", 0),
        "weather_mix": meta.get("weather_mix"),
        "frame_tags": meta.get("frame_tags"),
        "tuples": [list(t.frame_indices) for t in dataset.tuples],
        "scene_spec": _spec_to_dict(meta["scene_spec"])
        if "scene_spec" in meta else None,
        "trajectory_spec": _spec_to_dict(meta["trajectory_spec"])
        if "trajectory_spec" in meta else None,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _specs_from_manifest(manifest: dict):
    scene = traj = None
    if manifest.get("scene_spec"):
        d = dict(manifest["scene_spec"])
        d["landmark_kinds"] = tuple(d["landmark_kinds"])
        d["world_extent"] = tuple(d["world_extent"])
        d["image_dims"] = tuple(d["image_dims"])
        scene = SceneSpec(**d)
    if manifest.get("trajectory_spec"):
        traj = TrajectorySpec(**manifest["trajectory_spec"])
    return scene, traj


def load_dataset(in_dir) -> Dataset:
    """Rebuild a Dataset from a directory written by save_dataset."""
    with open(os.path.join(in_dir, MANIFEST_NAME)) as f:
        manifest = json.load(f)

    frames: dict[int, ImageSample] = {}
    with open(os.path.join(in_dir, POSES_NAME), newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != POSES_HEADER:
            raise ValueError(f"unexpected poses.csv header: {header}")
        for row in reader:
            idx = int(row[0])
            pixels = np.asarray(
                Image.open(os.path.join(in_dir, FRAME_TEMPLATE.format(idx))),
                dtype=np.float64)
            frames[idx] = ImageSample(
                pixels=pixels,
                pose=Pose(t=np.array([float(v) for v in row[1:4]]),
                          w=np.array([float(v) for v in row[4:7]])),
                weather_tag=WeatherTag(row[7]),
                frame_index=idx)

    tuples = [SampleTuple(samples=[frames[i] for i in idx_list])
              for idx_list in manifest["tuples"]]

    masks = {}
    for idx in frames:
        path = os.path.join(in_dir, MASK_TEMPLATE.format(idx))
        if os.path.exists(path):
            masks[idx] = LandmarkMask(mask=np.asarray(Image.open(path), dtype=bool))

    scene_spec, traj_spec = _specs_from_manifest(manifest)
    metadata = {
        "tuple_len": manifest.get("tuple_len"),
        "phase_seed": manifest.get("phase_seed", 0),
        "weather_mix": manifest.get("weather_mix"),
        "frame_tags": manifest.get("frame_tags"),
        "masks": masks,
    }
    if scene_spec is not None:
        metadata["scene_spec"] = scene_spec
    if traj_spec is not None:
        metadata["trajectory_spec"] = traj_spec
    return Dataset(tuples=tuples, metadata=metadata)


def load_masks(in_dir) -> dict[int, LandmarkMask]:
    """Just the landmark masks of a saved dataset, keyed by frame index."""
    out = {}
    mask_dir = os.path.join(in_dir, "masks")
    if not os.path.isdir(mask_dir):
        return out
    for name in sorted(os.listdir(mask_dir)):
        if name.startswith("mask_") and name.endswith(".png"):
            idx = int(name[5:-4])
            out[idx] = LandmarkMask(
                mask=np.asarray(Image.open(os.path.join(mask_dir, name)), dtype=bool))
    return out


def dataset_hash(in_dir) -> str:
    """sha256 over every file's relative path and bytes, in sorted order."""
    h = hashlib.sha256()
    entries = []
    for root, _, files in os.walk(in_dir):
        for name in files:
            full = os.path.join(root, name)
            entries.append((os.path.relpath(full, in_dir).replace(os.sep, "/"), full))
    for rel, full in sorted(entries):
        h.update(rel.encode())
        h.update(b"\0")
        with open(full, "rb") as f:
            h.update(f.read())
        h.update(b"\0")
    return h.hexdigest()
