"""Procedural cross-weather dataset generator with landmark ground truth.

A scene is a flat ground plane plus a handful of axis-aligned boxes
(blocks, posts, canopies) scattered around a closed driving loop. Frames
are raycast with a pinhole camera (z-up, yaw-only orientation) at 8-bit
integer precision, and every frame comes with a boolean mask of the pixels
covered by landmark geometry. That mask is what lets the analysis module
measure whether a perturbation concentrates on geometrically informative
regions.

Weather is a post-process on the clean render, in this order: brightness
offset, exposure ceiling, rain streaks, snow blobs, additive noise, final
clamp to [0, 255]. Streaks and blobs never exceed the exposure ceiling, so
before the noise stage no pixel does either. Geometry, poses, and masks
are identical across weather variants of the same frame.

Rendering is deliberately crude. The package tests augmentation math, not
graphics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import (Dataset, ImageSample, Pose, SampleTuple, WeatherTag,
                   WEATHER_ORDER)

LANDMARK_KINDS = ("block", "post", "canopy")


@dataclass(frozen=True)
class SceneSpec:
    """World recipe: everything needed to rebuild a scene bit-for-bit."""

    seed: int = 0
    num_landmarks: int = 12
    landmark_kinds: tuple[str, ...] = LANDMARK_KINDS
    world_extent: tuple[float, float] = (24.0, 24.0)
    trajectory_len: int = 40
    image_dims: tuple[int, int, int] = (64, 64, 3)

    def __post_init__(self):
        if self.num_landmarks < 1:
            raise ValueError(f"num_landmarks must be >= 1, got {self.num_landmarks}")
        if self.trajectory_len < 2:
            raise ValueError(f"trajectory_len must be >= 2, got {self.trajectory_len}")
        bad = [k for k in self.landmark_kinds if k not in LANDMARK_KINDS]
        if bad:
            raise ValueError(f"unknown landmark kinds {bad}, expected subset of {LANDMARK_KINDS}")
        if not self.landmark_kinds:
            raise ValueError("landmark_kinds must be non-empty")
        ex, ey = self.world_extent
        if not (ex > 0 and ey > 0):
            raise ValueError(f"world_extent must be positive, got {self.world_extent}")
        h, w, c = self.image_dims
        if c != 3 or h < 8 or w < 8:
            raise ValueError(f"image_dims must be (H>=8, W>=8, 3), got {self.image_dims}")


@dataclass(frozen=True)
class WeatherSpec:
    """Post-process parameters for one weather condition."""

    tag: WeatherTag
    brightness_offset: float = 0.0
    exposure_clip_level: float = 255.0
    streak_density: float = 0.0
    blob_density: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tag", WeatherTag(self.tag))
        vals = (self.brightness_offset, self.exposure_clip_level,
                self.streak_density, self.blob_density, self.noise_sigma)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"weather parameters must be finite, got {vals}")
        if not (0 < self.exposure_clip_level <= 255):
            raise ValueError(f"exposure_clip_level must be in (0, 255], "
                             f"got {self.exposure_clip_level}")
        if self.streak_density < 0 or self.blob_density < 0 or self.noise_sigma < 0:
            raise ValueError("densities and noise_sigma must be >= 0")


DEFAULT_WEATHER: dict[WeatherTag, WeatherSpec] = {
    WeatherTag.OVERCAST: WeatherSpec(tag=WeatherTag.OVERCAST, noise_sigma=2.0),
    WeatherTag.SUNNY: WeatherSpec(tag=WeatherTag.SUNNY, brightness_offset=40.0,
                                  noise_sigma=2.0),
    WeatherTag.OVEREXPOSURE: WeatherSpec(tag=WeatherTag.OVEREXPOSURE,
                                         brightness_offset=75.0,
                                         exposure_clip_level=235.0,
                                         noise_sigma=2.0),
    WeatherTag.RAIN: WeatherSpec(tag=WeatherTag.RAIN, brightness_offset=-25.0,
                                 streak_density=0.6, noise_sigma=3.0),
    WeatherTag.SNOW: WeatherSpec(tag=WeatherTag.SNOW, brightness_offset=15.0,
                                 blob_density=0.7, noise_sigma=3.0),
}


@dataclass(frozen=True)
class TrajectorySpec:
    """Closed loop around the world center with seeded radial wobble.

    toe_in turns the camera from the travel direction toward the loop
    interior, so the view stays on landmark geometry instead of the empty
    corridor ahead.
    """

    radius_frac: float = 0.3
    wobble: float = 0.08
    wobble_cycles: int = 3
    camera_height: float = 1.2
    toe_in: float = 0.7

    def __post_init__(self):
        if not (0 < self.radius_frac < 0.5):
            raise ValueError(f"radius_frac must be in (0, 0.5), got {self.radius_frac}")
        if not (0 <= self.wobble < 0.5):
            raise ValueError(f"wobble must be in [0, 0.5), got {self.wobble}")
        if self.camera_height <= 0:
            raise ValueError(f"camera_height must be > 0, got {self.camera_height}")
        if not (-math.pi / 2 <= self.toe_in <= math.pi / 2):
            raise ValueError(f"toe_in must be within +/- pi/2, got {self.toe_in}")


@dataclass(frozen=True)
class LandmarkMask:
    """Boolean map of pixels rendered from landmark geometry."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.dtype != np.bool_ or m.ndim != 2:
            raise ValueError(f"mask must be a 2-D boolean array, got "
                             f"dtype={m.dtype}, ndim={m.ndim}")
        object.__setattr__(self, "mask", m)

    def coverage(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class _Box:
    """Axis-aligned box [lo, hi] with a flat base color."""

    lo: np.ndarray
    hi: np.ndarray
    color: np.ndarray
    kind: str


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    boxes: tuple[_Box, ...]
    ground_color: np.ndarray = field(
        default_factory=lambda: np.array([96.0, 90.0, 82.0]))
    sky_top: np.ndarray = field(
        default_factory=lambda: np.array([92.0, 112.0, 162.0]))
    sky_horizon: np.ndarray = field(
        default_factory=lambda: np.array([150.0, 168.0, 196.0]))

    @property
    def center(self) -> np.ndarray:
        return np.array(self.spec.world_extent) / 2.0


def generate_scene(spec: SceneSpec) -> Scene:
    """Place landmarks on two rings straddling the camera loop.

    Placement rejects footprints that overlap an already placed landmark,
    so boxes never coincide; the camera corridor (the loop radius band)
    stays clear so the trajectory precondition of render_frame holds.
    """
    rng = np.random.default_rng((spec.seed, 0x5CE))
    ex, ey = spec.world_extent
    center = np.array([ex, ey]) / 2.0
    loop_r = 0.3 * min(ex, ey)
    # the corridor the default trajectory sweeps (radius band plus wobble);
    # landmark footprints must stay clear of it
    corridor_lo = loop_r * 0.90 - 0.45
    corridor_hi = loop_r * 1.10 + 0.45
    placed: list[_Box] = []
    kinds = tuple(spec.landmark_kinds)
    cluster_n = min(spec.num_landmarks, max(4, spec.num_landmarks // 3))
    attempts = 0
    while len(placed) < spec.num_landmarks and attempts < 2000:
        attempts += 1
        # the first landmarks form a tall central cluster spread around the
        # world center so the toed-in camera sees geometry from any heading;
        # the rest scatter inside or outside the loop
        cluster = len(placed) < cluster_n
        if cluster:
            kind = "block" if "block" in kinds else kinds[0]
            radius = loop_r * (0.34 + 0.16 * rng.random())
            angle = 2 * math.pi * len(placed) / cluster_n + rng.uniform(-0.3, 0.3)
        else:
            kind = kinds[int(rng.integers(len(kinds)))]
            inner = rng.random() < 0.5
            radius = loop_r * (0.10 + 0.50 * rng.random()) if inner \
                else loop_r * (1.18 + 0.42 * rng.random())
            angle = rng.uniform(0, 2 * math.pi)
        cx, cy = center + radius * np.array([math.cos(angle), math.sin(angle)])
        if kind == "block":
            lo_s, hi_s = (2.2, 3.2) if cluster else (2.0, 3.4)
            sx, sy = rng.uniform(lo_s, hi_s, size=2)
            z0, z1 = 0.0, rng.uniform(2.4, 3.8) if cluster else rng.uniform(1.8, 3.2)
        elif kind == "post":
            sx = sy = rng.uniform(0.3, 0.6)
            z0, z1 = 0.0, rng.uniform(2.5, 4.2)
        else:
            sx, sy = rng.uniform(2.0, 3.0, size=2)
            z0 = rng.uniform(1.8, 2.4)
            z1 = z0 + rng.uniform(0.3, 0.6)
        lo = np.array([cx - sx / 2, cy - sy / 2, z0])
        hi = np.array([cx + sx / 2, cy + sy / 2, z1])
        if lo[0] < 0.5 or lo[1] < 0.5 or hi[0] > ex - 0.5 or hi[1] > ey - 0.5:
            continue
        # exact rectangle-to-center distances for the corridor clearance test
        near = np.clip(center, lo[:2], hi[:2]) - center
        far = np.maximum(np.abs(lo[:2] - center), np.abs(hi[:2] - center))
        d_near, d_far = np.linalg.norm(near), np.linalg.norm(far)
        if d_near < corridor_hi and d_far > corridor_lo:
            continue
        overlap = any(np.all(b.lo[:2] < hi[:2]) and np.all(lo[:2] < b.hi[:2])
                      for b in placed)
        if overlap:
            continue
        color = rng.uniform(70, 210, size=3)
        placed.append(_Box(lo=lo, hi=hi, color=color, kind=kind))
    if len(placed) < spec.num_landmarks:
        raise RuntimeError(f"could only place {len(placed)} of "
                           f"{spec.num_landmarks} landmarks; reduce count or "
                           f"grow the world extent")
    return Scene(spec=spec, boxes=tuple(placed))


def trajectory_poses(spec: SceneSpec, traj: TrajectorySpec, n_frames: int | None = None,
                     *, phase_seed: int = 0) -> list[Pose]:
    """Closed planar loop with low-frequency radial wobble, yaw along travel.

    Yaw is unwrapped along the loop so consecutive frames never jump by
    2*pi; the single wrap seam sits between the last and first frame, which
    no tuple window straddles.
    """
    n = int(n_frames if n_frames is not None else spec.trajectory_len)
    if n < 2:
        raise ValueError(f"need at least 2 frames, got {n}")
    rng = np.random.default_rng((spec.seed, 0x7A7, phase_seed))
    phase = rng.uniform(0, 2 * math.pi)
    ex, ey = spec.world_extent
    center = np.array([ex, ey]) / 2.0
    base_r = traj.radius_frac * min(ex, ey)
    theta = phase + 2 * math.pi * np.arange(n) / n
    r = base_r * (1 + traj.wobble * np.sin(traj.wobble_cycles * theta
                                           + rng.uniform(0, 2 * math.pi)))
    xy = center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    ahead = np.roll(xy, -1, axis=0) - np.roll(xy, 1, axis=0)
    # travel is counterclockwise, so +toe_in turns toward the loop interior
    yaw = np.unwrap(np.arctan2(ahead[:, 1], ahead[:, 0])) + traj.toe_in
    poses = []
    for k in range(n):
        t = np.array([xy[k, 0], xy[k, 1], traj.camera_height])
        poses.append(Pose(t=t, w=np.array([0.0, 0.0, yaw[k] / 2.0])))
    return poses


# --- raycasting ---------------------------------------------------------------

_HFOV_TAN = 1.0  # 90 degree horizontal field of view


def _ray_grid(h: int, w: int, yaw: float) -> np.ndarray:
    """Unnormalized ray directions, shape (H, W, 3), z-up world."""
    fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    u = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    v = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    vfov_tan = _HFOV_TAN * h / w
    d = (fwd[None, None, :]
         + u[None, :, None] * _HFOV_TAN * right[None, None, :]
         + v[:, None, None] * vfov_tan * up[None, None, :])
    return d


def _intersect_box(origin: np.ndarray, dirs: np.ndarray, box: _Box):
    """Slab-method ray/box test; returns (hit mask, entry distance, axis)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box.lo[None, None, :] - origin[None, None, :]) * inv
        t1 = (box.hi[None, None, :] - origin[None, None, :]) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # rays parallel to an axis hit iff the origin lies inside that slab
    par = dirs == 0.0
    inside = (origin[None, None, :] >= box.lo[None, None, :]) & \
             (origin[None, None, :] <= box.hi[None, None, :])
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = tmin.max(axis=2)
    t_exit = tmax.min(axis=2)
    hit = (t_enter <= t_exit) & (t_exit > 1e-9) & (t_enter > 1e-9)
    axis = tmin.argmax(axis=2)
    return hit, np.where(hit, t_enter, np.inf), axis


_FACE_SHADE = np.array([0.84, 0.68, 1.0])  # x faces, y faces, top/bottom


def render_clean(scene: Scene, pose: Pose) -> tuple[np.ndarray, LandmarkMask]:
    """Raycast the scene without weather; integer pixels in [0, 255]."""
    ex, ey = scene.spec.world_extent
    if not (0 <= pose.t[0] <= ex and 0 <= pose.t[1] <= ey):
        raise ValueError(f"pose position {pose.t[:2]} outside world extent "
                         f"{scene.spec.world_extent}")
    h, w, _ = scene.spec.image_dims
    yaw = 2.0 * pose.w[2]
    origin = pose.t
    dirs = _ray_grid(h, w, yaw)

    depth = np.full((h, w), np.inf)
    img = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)

    # sky: vertical gradient keyed on ray elevation
    dn = dirs / np.linalg.norm(dirs, axis=2, keepdims=True)
    elev = np.clip(dn[:, :, 2], 0.0, 1.0)[:, :, None]
    img[:] = scene.sky_horizon * (1 - elev) + scene.sky_top * elev

    # ground plane z=0 with gentle distance fade
    dz = dirs[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz < 0, -origin[2] / dz, np.inf)
    gmask = np.isfinite(t_ground)
    dist = t_ground[gmask] * np.linalg.norm(dirs, axis=2)[gmask]
    fade = 1.0 / (1.0 + 0.02 * dist)
    img[gmask] = scene.ground_color[None, :] * fade[:, None]
    depth[gmask] = t_ground[gmask]

    for box in scene.boxes:
        hit, t_enter, axis = _intersect_box(origin, dirs, box)
        closer = hit & (t_enter < depth)
        if not closer.any():
            continue
        shade = _FACE_SHADE[axis[closer]]
        img[closer] = box.color[None, :] * shade[:, None]
        depth[closer] = t_enter[closer]
        mask[closer] = True
    return np.rint(np.clip(img, 0, 255)), LandmarkMask(mask=mask)


def _draw_streaks(img: np.ndarray, count: int, cap: float, rng: np.random.Generator):
    """Thin bright diagonal lines, intensity capped at the exposure level."""
    h, w, _ = img.shape
    for _ in range(count):
        r0 = rng.uniform(-0.2 * h, h)
        c0 = rng.uniform(0, w)
        length = int(rng.uniform(h / 6, h / 3))
        val = min(cap, rng.uniform(190, 235))
        rows = (r0 + np.arange(length)).astype(int)
        cols = (c0 + 0.35 * np.arange(length)).astype(int)
        keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        img[rows[keep], cols[keep], :] = val


def _draw_blobs(img: np.ndarray, count: int, cap: float, rng: np.random.Generator):
    """Small white discs, intensity capped at the exposure level."""
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(1.0, 2.5)
        val = min(cap, 246.0)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        img[disc, :] = val


def apply_weather(clean: np.ndarray, weather: WeatherSpec,
                  rng: np.random.Generator) -> np.ndarray:
    """Brightness, exposure ceiling, streaks, blobs, noise, final clamp.

    Streak and blob intensities are capped at the exposure ceiling, so no
    pixel exceeds it until the noise stage. Output is integer-valued.
    """
    h, w, _ = clean.shape
    img = clean + weather.brightness_offset
    img = np.minimum(img, weather.exposure_clip_level)
    n_streaks = int(round(weather.streak_density * h * w / 100.0))
    if n_streaks:
        _draw_streaks(img, n_streaks, weather.exposure_clip_level, rng)
    n_blobs = int(round(weather.blob_density * h * w / 100.0))
    if n_blobs:
        _draw_blobs(img, n_blobs, weather.exposure_clip_level, rng)
    if weather.noise_sigma > 0:
        img = img + rng.normal(0.0, weather.noise_sigma, size=img.shape)
    return np.rint(np.clip(img, 0, 255))


def render_frame(scene: Scene, pose: Pose, weather: WeatherSpec,
                 *, frame_index: int = 0) -> tuple[ImageSample, LandmarkMask]:
    """Full render: geometry, then weather. The mask is weather-independent.

    The weather RNG is seeded from (scene seed, frame index, weather tag),
    so re-rendering any frame is bitwise reproducible and independent of
    render order.
    """
    clean, mask = render_clean(scene, pose)
    tag_code = WEATHER_ORDER.index(weather.tag)
    rng = np.random.default_rng((scene.spec.seed, 0xF0, int(frame_index), tag_code))
    pixels = apply_weather(clean, weather, rng)
    sample = ImageSample(pixels=pixels, pose=pose, weather_tag=weather.tag,
                         frame_index=int(frame_index))
    return sample, mask


# --- dataset assembly --------------------------------------------------------


def weather_segments(mix: Mapping, n_frames: int) -> list[WeatherTag]:
    """Assign contiguous weather segments by largest-remainder rounding.

    Segments follow the canonical weather order, mimicking real drives
    where conditions change a few times per sequence rather than per frame.
    """
    norm: dict[WeatherTag, float] = {}
    for tag, frac in mix.items():
        tag = WeatherTag(tag)
        if frac < 0:
            raise ValueError(f"negative fraction {frac} for {tag.value}")
        if frac > 0:
            norm[tag] = norm.get(tag, 0.0) + float(frac)
    total = sum(norm.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weather fractions must sum to 1, got {total}")
    ordered = [t for t in WEATHER_ORDER if t in norm]
    ideal = {t: norm[t] * n_frames for t in ordered}
    counts = {t: int(math.floor(ideal[t])) for t in ordered}
    short = n_frames - sum(counts.values())
    by_rem = sorted(ordered, key=lambda t: (-(ideal[t] - counts[t]), WEATHER_ORDER.index(t)))
    for t in by_rem[:short]:
        counts[t] += 1
    tags: list[WeatherTag] = []
    for t in ordered:
        tags.extend([t] * counts[t])
    return tags


def generate_dataset(scene_spec: SceneSpec, traj_spec: TrajectorySpec,
                     weather_mix: Mapping, tuple_len: int,
                     *, weather_table: Mapping[WeatherTag, WeatherSpec] | None = None,
                     n_frames: int | None = None, phase_seed: int = 0) -> Dataset:
    """Render a trajectory under a weather mix and window it into tuples.

    Tuples are overlapping windows of stride 1 (n - s + 1 of them), so
    every adjacent frame pair appears in the relative-pose loss. Masks ride
    along in metadata["masks"] keyed by frame index.
    """
    if tuple_len < 2:
        raise ValueError(f"tuple_len must be >= 2, got {tuple_len}")
    scene = generate_scene(scene_spec)
    poses = trajectory_poses(scene_spec, traj_spec, n_frames, phase_seed=phase_seed)
    n = len(poses)
    if n < tuple_len:
        raise ValueError(f"{n} frames cannot form tuples of length {tuple_len}")
    tags = weather_segments(weather_mix, n)
    table = dict(DEFAULT_WEATHER)
    if weather_table:
        table.update({WeatherTag(k): v for k, v in weather_table.items()})
    samples: list[ImageSample] = []
    masks: dict[int, LandmarkMask] = {}
    for k in range(n):
        sample, mask = render_frame(scene, poses[k], table[tags[k]], frame_index=k)
        samples.append(sample)
        masks[k] = mask
    tuples = [SampleTuple(samples=samples[k:k + tuple_len])
              for k in range(n - tuple_len + 1)]
    metadata = {
        "scene_spec": scene_spec,
        "trajectory_spec": traj_spec,
        "weather_mix": {WeatherTag(t).value: float(f) for t, f in weather_mix.items()},
        "tuple_len": int(tuple_len),
        "phase_seed": int(phase_seed),
        "masks": masks,
        "frame_tags": [t.value for t in tags],
    }
    return Dataset(tuples=tuples, metadata=metadata)
