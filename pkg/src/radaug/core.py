"""Core value types shared across the library: poses, images, tuples, datasets.

Conventions:
  - translations t are 3-vectors in scene units (meters at full scale)
  - rotations w are log-quaternions: the 3-vector v of a unit quaternion
    q = (cos|v|, sin|v| * v/|v|), an unconstrained regression target
  - pixels are reals in [0, 255], channel-last (H, W, C)

All types are plain immutable values; nothing here mutates its inputs, so
instances are safe to share between threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np


class WeatherTag(str, enum.Enum):
    OVERCAST = "overcast"
    SUNNY = "sunny"
    OVEREXPOSURE = "overexposure"
    RAIN = "rain"
    SNOW = "snow"


# Reporting order for per-weather tables (training weather first, then the
# test conditions in their usual order).
WEATHER_ORDER = (
    WeatherTag.OVERCAST,
    WeatherTag.SUNNY,
    WeatherTag.OVEREXPOSURE,
    WeatherTag.RAIN,
    WeatherTag.SNOW,
)


def _as_vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    return v


@dataclass(frozen=True)
class Pose:
    """6-DoF camera pose: translation t plus log-quaternion rotation w."""

    t: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))
        object.__setattr__(self, "w", _as_vec3(self.w, "w"))

    def as_vector(self) -> np.ndarray:
        """Pack into a flat (6,) vector [t, w]."""
        return np.concatenate([self.t, self.w])

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(t=v[:3], w=v[3:])


@dataclass(frozen=True)
class RelativePose:
    """Componentwise pose difference between two frames: (t_i - t_j, w_i - w_j)."""

    dt: np.ndarray
    dw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dt", _as_vec3(self.dt, "dt"))
        object.__setattr__(self, "dw", _as_vec3(self.dw, "dw"))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dt, self.dw])


def pose_compose_relative(p_i: Pose, p_j: Pose) -> RelativePose:
    """Relative pose of frame i with respect to frame j.

    Deliberately the plain componentwise difference, including the rotation
    part: dw = w_i - w_j is a log-quaternion *difference*, not a geodesic
    composition. That is the convention the loss operates in.
    """
    return RelativePose(dt=p_i.t - p_j.t, dw=p_i.w - p_j.w)


def logquat_to_quat(w) -> np.ndarray:
    """Exponential map: 3-vector log-quaternion -> unit quaternion (w, x, y, z)."""
    w = _as_vec3(w, "w")
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        # First-order expansion keeps this smooth through zero.
        q = np.array([1.0, w[0], w[1], w[2]])
    else:
        s = np.sin(theta) / theta
        q = np.array([np.cos(theta), s * w[0], s * w[1], s * w[2]])
    return q / np.linalg.norm(q)


def rotation_error_degrees(w_a, w_b) -> float:
    """Angular distance between two log-quaternion rotations, in degrees.

    theta = 2 * arccos(|<q_a, q_b>|), always in [0, 180].
    """
    q_a = logquat_to_quat(w_a)
    q_b = logquat_to_quat(w_b)
    d = abs(float(np.dot(q_a, q_b)))
    d = min(d, 1.0)
    return float(np.degrees(2.0 * np.arccos(d)))


@dataclass(frozen=True)
class ImageSample:
    """One frame: pixel array, its ground-truth pose and weather tag.

    Pixels are reals in [0, 255]. The range is *not* enforced here because
    the no-clip ablation intentionally produces out-of-range samples; stages
    that claim the range (rendering, clipped perturbation) enforce it and
    `in_range` lets callers check.
    """

    pixels: np.ndarray
    pose: Pose
    weather_tag: WeatherTag
    frame_index: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3:
            raise ValueError(f"pixels must be (H, W, C), got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "weather_tag", WeatherTag(self.weather_tag))
        object.__setattr__(self, "frame_index", int(self.frame_index))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    @property
    def in_range(self) -> bool:
        return bool(self.pixels.min() >= 0.0 and self.pixels.max() <= 255.0)

    def with_pixels(self, pixels: np.ndarray) -> "ImageSample":
        """Copy of this sample with new pixels; pose and tag carried over."""
        return ImageSample(pixels=pixels, pose=self.pose,
                           weather_tag=self.weather_tag, frame_index=self.frame_index)


@dataclass(frozen=True)
class Perturbation:
    """Per-pixel additive delta, same shape as its source image."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"delta must be (H, W, C), got shape {d.shape}")
        object.__setattr__(self, "delta", d)

    def max_abs(self) -> float:
        return float(np.abs(self.delta).max()) if self.delta.size else 0.0


@dataclass(frozen=True)
class SampleTuple:
    """A short window of consecutive frames used by the relative-pose loss."""

    samples: tuple[ImageSample, ...]

    def __post_init__(self):
        samples = tuple(self.samples)
        if len(samples) < 2:
            raise ValueError(f"tuple needs >= 2 samples, got {len(samples)}")
        idx = [s.frame_index for s in samples]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise ValueError(f"frame indices must increase by 1, got {idx}")
        dims = {s.dims for s in samples}
        if len(dims) != 1:
            raise ValueError(f"samples disagree on image dims: {dims}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[ImageSample]:
        return iter(self.samples)

    @property
    def frame_indices(self) -> tuple[int, ...]:
        return tuple(s.frame_index for s in self.samples)

    def pixel_stack(self) -> np.ndarray:
        """(s, H, W, C) stack of the tuple's pixel arrays."""
        return np.stack([s.pixels for s in self.samples])

    def poses(self) -> list[Pose]:
        return [s.pose for s in self.samples]

    def pose_matrix(self) -> np.ndarray:
        """(s, 6) matrix of ground-truth pose vectors."""
        return np.stack([s.pose.as_vector() for s in self.samples])


@dataclass(frozen=True)
class Dataset:
    """A bag of sample tuples plus generation metadata.

    Tuples may overlap (sliding windows), so `frames()` deduplicates by
    frame index when per-frame iteration is wanted.
    """

    tuples: tuple[SampleTuple, ...]
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        tuples = tuple(self.tuples)
        if not tuples:
            raise ValueError("dataset must contain at least one tuple")
        dims = {t.samples[0].dims for t in tuples}
        if len(dims) != 1:
            raise ValueError(f"tuples disagree on image dims: {dims}")
        object.__setattr__(self, "tuples", tuples)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.tuples[0].samples[0].dims

    def __len__(self) -> int:
        return len(self.tuples)

    def frames(self) -> list[ImageSample]:
        """Unique frames across all tuples, sorted by frame index."""
        seen: dict[int, ImageSample] = {}
        for tup in self.tuples:
            for s in tup:
                seen.setdefault(s.frame_index, s)
        return [seen[k] for k in sorted(seen)]


def poses_to_matrix(poses: Sequence[Pose]) -> np.ndarray:
    """(n, 6) matrix from a pose sequence."""
    return np.stack([p.as_vector() for p in poses])


def matrix_to_poses(m: np.ndarray) -> list[Pose]:
    m = np.asarray(m, dtype=np.float64)
    return [Pose.from_vector(row) for row in m]
