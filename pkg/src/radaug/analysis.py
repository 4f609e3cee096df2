"""Where does a perturbation land? Spatial histograms and mask overlap.

Two views of a perturbation's spatial distribution:

  - a 3x3 sub-square histogram of perturbation mass (fraction of total
    |delta| per cell, pixels below a small magnitude threshold omitted);
  - a concentration report against the landmark mask: how much of the
    perturbation mass sits on geometrically informative pixels, relative
    to the area those pixels occupy. A ratio above 1 means the method
    concentrates where the geometry is.

compare_methods runs several perturbation configs over the same frames
and emits histograms, concentration stats, and side-by-side image strips
(original, signed delta around mid-gray, perturbed).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import Perturbation, SampleTuple
from .loss import LossParams
from .model import PoseRegressor
from .perturb import PerturberConfig, perturb_batch
from .synth import LandmarkMask


@dataclass(frozen=True)
class SubsquareHistogram:
    """3x3 grid of perturbation-mass fractions.

    empty means the delta had no pixel above the omission threshold, in
    which case the grid is all zeros and does not sum to 1.
    """

    grid: np.ndarray
    zero_omitted: bool
    empty: bool
    count_mode: bool = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.shape != (3, 3):
            raise ValueError(f"grid must be 3x3, got {g.shape}")
        if not self.empty and abs(g.sum() - 1.0) > 1e-9:
            raise ValueError(f"non-empty histogram must sum to 1, got {g.sum()}")
        object.__setattr__(self, "grid", g)

    def entropy(self) -> float:
        """Shannon entropy (nats) of the cell distribution; 0 for empty."""
        if self.empty:
            return 0.0
        p = self.grid[self.grid > 0]
        return float(-(p * np.log(p)).sum())


@dataclass(frozen=True)
class ConcentrationReport:
    """Perturbation mass on landmark pixels vs the area they occupy."""

    landmark_mass_fraction: float
    landmark_pixel_fraction: float
    concentration_ratio: float
    undefined: bool

    def __post_init__(self):
        if self.undefined:
            return
        if not (0 <= self.landmark_mass_fraction <= 1 + 1e-12):
            raise ValueError(f"mass fraction out of [0,1]: {self.landmark_mass_fraction}")
        if not (0 <= self.landmark_pixel_fraction <= 1 + 1e-12):
            raise ValueError(f"pixel fraction out of [0,1]: {self.landmark_pixel_fraction}")
        expect = self.landmark_mass_fraction / self.landmark_pixel_fraction
        if abs(self.concentration_ratio - expect) > 1e-9 * max(1.0, expect):
            raise ValueError("ratio != mass fraction / pixel fraction")


def _band_edges(size: int) -> list[tuple[int, int]]:
    """Three bands covering [0, size); the remainder goes to the last band."""
    b = size // 3
    return [(0, b), (b, 2 * b), (2 * b, size)]


def _delta_array(delta) -> np.ndarray:
    arr = delta.delta if isinstance(delta, Perturbation) else np.asarray(delta)
    mag = np.abs(np.asarray(arr, dtype=np.float64))
    if mag.ndim == 3:
        mag = mag.sum(axis=2)
    if mag.ndim != 2:
        raise ValueError(f"delta must be (H, W) or (H, W, C), got ndim {mag.ndim}")
    return mag


def subsquare_histogram(delta, threshold_abs: float = 1e-6,
                        *, count_mode: bool = False) -> SubsquareHistogram:
    """Fraction of perturbation mass (or perturbed-pixel count) per 3x3 cell.

    Pixels with |delta| <= threshold_abs are omitted before accumulation;
    channel magnitudes are summed into one per-pixel value first.
    """
    mag = _delta_array(delta)
    h, w = mag.shape
    if h < 3 or w < 3:
        raise ValueError(f"image must be at least 3x3, got {h}x{w}")
    active = mag > threshold_abs
    weights = active.astype(np.float64) if count_mode else np.where(active, mag, 0.0)
    grid = np.zeros((3, 3))
    for gi, (r0, r1) in enumerate(_band_edges(h)):
        for gj, (c0, c1) in enumerate(_band_edges(w)):
            grid[gi, gj] = weights[r0:r1, c0:c1].sum()
    total = grid.sum()
    if total <= 0:
        return SubsquareHistogram(grid=np.zeros((3, 3)), zero_omitted=bool((~active).any()),
                                  empty=True, count_mode=count_mode)
    return SubsquareHistogram(grid=grid / total, zero_omitted=bool((~active).any()),
                              empty=False, count_mode=count_mode)


def concentration(delta, mask: LandmarkMask) -> ConcentrationReport:
    """How much perturbation mass lands on landmark pixels vs their area."""
    mag = _delta_array(delta)
    m = mask.mask if isinstance(mask, LandmarkMask) else np.asarray(mask, dtype=bool)
    if mag.shape != m.shape:
        raise ValueError(f"delta {mag.shape} and mask {m.shape} shapes differ")
    total = float(mag.sum())
    pixel_frac = float(m.mean())
    if total <= 0 or pixel_frac <= 0:
        return ConcentrationReport(landmark_mass_fraction=0.0,
                                   landmark_pixel_fraction=pixel_frac,
                                   concentration_ratio=float("nan"), undefined=True)
    mass_frac = float(mag[m].sum()) / total
    return ConcentrationReport(landmark_mass_fraction=mass_frac,
                               landmark_pixel_fraction=pixel_frac,
                               concentration_ratio=mass_frac / pixel_frac,
                               undefined=False)


@dataclass(frozen=True)
class MethodAnalysis:
    """Per-method results over a shared set of frames."""

    method: str
    cfg: PerturberConfig
    histograms: list[SubsquareHistogram]
    reports: list[ConcentrationReport]
    mean_grid: np.ndarray
    mean_entropy: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilon": self.cfg.epsilon,
            "pow": self.cfg.pow,
            "mean_grid": self.mean_grid.tolist(),
            "mean_entropy": self.mean_entropy,
            "histograms": [h.grid.tolist() for h in self.histograms],
            "concentration_ratios": [r.concentration_ratio for r in self.reports],
            "mass_fractions": [r.landmark_mass_fraction for r in self.reports],
        }


def _midpoint_code(delta: np.ndarray) -> np.ndarray:
    """Signed delta rendered around mid-gray 128, clipped to [0, 255]."""
    peak = float(np.abs(delta).max())
    scaled = delta * (127.0 / peak) if peak > 0 else np.zeros_like(delta)
    return np.clip(np.rint(128.0 + scaled), 0, 255)


def _strip(original: np.ndarray, delta: np.ndarray, perturbed: np.ndarray) -> np.ndarray:
    gap = np.full((original.shape[0], 2, original.shape[2]), 255.0)
    return np.concatenate([np.clip(np.rint(original), 0, 255), gap,
                           _midpoint_code(delta), gap,
                           np.clip(np.rint(perturbed), 0, 255)], axis=1)


def compare_methods(model: PoseRegressor, tuples: list[SampleTuple],
                    masks: dict[int, LandmarkMask],
                    methods: list[PerturberConfig], params: LossParams,
                    *, out_dir=None, strip_frames: int = 4,
                    threshold_abs: float = 1e-6) -> list[MethodAnalysis]:
    """Perturb the first frame of every tuple under each method and compare.

    When out_dir is given, writes per-method histogram JSON and PNG strips
    of [original | coded delta | perturbed] for the first few frames.
    """
    results = []
    for cfg in methods:
        hists, reports, strips = [], [], []
        for tup in tuples:
            res = perturb_batch(model, [tup], [tup.poses()], params, cfg)
            delta = res.records[0]
            frame = tup.samples[0]
            hists.append(subsquare_histogram(delta, threshold_abs))
            mask = masks.get(frame.frame_index)
            if mask is not None:
                reports.append(concentration(delta, mask))
            if len(strips) < strip_frames:
                strips.append(_strip(frame.pixels, delta.delta,
                                     res.batch[0].samples[0].pixels))
        grids = np.stack([h.grid for h in hists])
        mean_grid = grids.mean(axis=0)
        mean_entropy = float(np.mean([h.entropy() for h in hists]))
        analysis = MethodAnalysis(method=cfg.method, cfg=cfg, histograms=hists,
                                  reports=reports, mean_grid=mean_grid,
                                  mean_entropy=mean_entropy)
        results.append(analysis)
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, f"{cfg.method}_histogram.json"), "w") as f:
                json.dump(analysis.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
            from PIL import Image
            for i, strip in enumerate(strips):
                img = Image.fromarray(strip.astype(np.uint8))
                img.save(os.path.join(out_dir, f"{cfg.method}_strip_{i}.png"))
    return results


def perturbation_entropy(delta, threshold_abs: float = 1e-6) -> float:
    """Normalized-entropy of the per-pixel |delta| distribution (nats).

    Lower entropy means the perturbation mass is concentrated on fewer
    pixels. For the power-law family delta = eps*|g|^pow this is
    non-increasing in pow for a fixed gradient field.
    """
    mag = _delta_array(delta).ravel()
    mag = mag[mag > threshold_abs]
    if mag.size == 0:
        return 0.0
    p = mag / mag.sum()
    return float(-(p * np.log(p)).sum())
