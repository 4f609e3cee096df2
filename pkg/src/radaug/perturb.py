"""Gradient-based and baseline image perturbations.

The unified formula is delta = epsilon * sign(g) * |g|^pow applied to the
frozen-model input gradient g:

  pow = 0  -> sign attack (every nonzero-gradient pixel moves by epsilon)
  pow = 1  -> plain gradient step
  pow > 1  -> gradient magnitudes are raised to a power, which concentrates
              the perturbation budget on the pixels the loss is most
              sensitive to

Two safeguards bracket the raw step: a per-batch magnitude threshold
(x_max - x_min) / eta and a clip of the perturbed pixels back into
[0, 255]. Both are individually switchable for ablations. A seeded
Gaussian baseline and a no-op method complete the menu.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import ImageSample, Perturbation, SampleTuple
from .loss import LossParams
from .model import InputGradient, PoseRegressor

METHODS = ("rada", "fgsm", "fgm", "gaussian", "none")

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0


@dataclass(frozen=True)
class PerturberConfig:
    """Knobs for one perturbation method.

    pow is canonicalized: fgsm forces 0, fgm forces 1, and rada requires a
    value > 1 (that strict inequality is what separates it from a plain
    gradient step).
    """

    method: str = "rada"
    epsilon: float = 158.0
    pow: float = 1.5
    eta: int = 10
    use_threshold: bool = True
    use_clip: bool = True
    threshold_per_image: bool = False
    gaussian_mean: float = 0.0
    gaussian_var: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not (np.isfinite(self.pow) and self.pow >= 0):
            raise ValueError(f"pow must be finite and >= 0, got {self.pow}")
        if not (isinstance(self.eta, (int, np.integer)) and self.eta >= 1):
            raise ValueError(f"eta must be a positive integer, got {self.eta!r}")
        if not (np.isfinite(self.gaussian_var) and self.gaussian_var >= 0):
            raise ValueError(f"gaussian_var must be >= 0, got {self.gaussian_var}")
        if self.method == "fgsm":
            object.__setattr__(self, "pow", 0.0)
        elif self.method == "fgm":
            object.__setattr__(self, "pow", 1.0)
        elif self.method == "rada" and self.pow <= 1:
            raise ValueError(f"rada requires pow > 1, got {self.pow}")

    def with_flags(self, *, use_threshold=None, use_clip=None) -> "PerturberConfig":
        kw = {}
        if use_threshold is not None:
            kw["use_threshold"] = use_threshold
        if use_clip is not None:
            kw["use_clip"] = use_clip
        return replace(self, **kw)


@dataclass(frozen=True)
class ThresholdValue:
    """Per-batch perturbation cap (x_max - x_min) / eta with its provenance."""

    eta_th: float
    x_max: float
    x_min: float
    eta: int

    def __post_init__(self):
        if not np.isfinite(self.eta_th) or self.eta_th < 0:
            raise ValueError(f"eta_th must be finite and >= 0, got {self.eta_th}")
        expect = (self.x_max - self.x_min) / self.eta
        if abs(self.eta_th - expect) > 1e-9 * max(1.0, abs(expect)):
            raise ValueError(f"eta_th {self.eta_th} inconsistent with "
                             f"(x_max - x_min)/eta = {expect}")


def _batch_pixels(batch) -> list[np.ndarray]:
    out = []
    for item in batch:
        if isinstance(item, ImageSample):
            out.append(item.pixels)
        elif isinstance(item, SampleTuple):
            out.extend(s.pixels for s in item.samples)
        else:
            out.append(np.asarray(item, dtype=np.float64))
    return out


def compute_threshold(batch, eta: int) -> ThresholdValue:
    """Threshold over the min/max of every pixel in the batch jointly."""
    if eta < 1:
        raise ValueError(f"eta must be >= 1, got {eta}")
    pixels = _batch_pixels(batch)
    if not pixels:
        raise ValueError("cannot compute a threshold over an empty batch")
    x_max = max(float(p.max()) for p in pixels)
    x_min = min(float(p.min()) for p in pixels)
    return ThresholdValue(eta_th=(x_max - x_min) / eta, x_max=x_max, x_min=x_min,
                          eta=int(eta))


def compute_threshold_per_image(batch, eta: int) -> list[ThresholdValue]:
    """One threshold per image instead of one per batch (alternate reading)."""
    pixels = _batch_pixels(batch)
    if not pixels:
        raise ValueError("cannot compute a threshold over an empty batch")
    return [compute_threshold([p], eta) for p in pixels]


def raw_perturbation(grad, epsilon: float, pow: float) -> Perturbation:
    """delta = epsilon * sign(g) * |g|^pow, with sign(0) = 0.

    |g|^pow rather than g^pow: the explicit sign factor carries the
    direction, so the magnitude term must be sign-free (and g^pow would be
    undefined for negative g at non-integer pow anyway).
    """
    if pow < 0:
        raise ValueError(f"pow must be >= 0, got {pow}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    g = grad.grad if isinstance(grad, InputGradient) else np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite values")
    # sign() zeroes the |0|^0 = 1 convention, keeping zero-gradient pixels at 0
    delta = epsilon * np.sign(g) * np.abs(g) ** pow
    return Perturbation(delta=delta)


def apply_threshold(delta: Perturbation, th: ThresholdValue) -> Perturbation:
    """Symmetric magnitude clamp to [-eta_th, +eta_th]."""
    return Perturbation(delta=np.clip(delta.delta, -th.eta_th, th.eta_th))


def make_adversarial(x: ImageSample, delta: Perturbation, use_clip: bool) -> ImageSample:
    """x + delta, optionally clipped to [0, 255]; pose and tag pass through."""
    if delta.delta.shape != x.pixels.shape:
        raise ValueError(f"delta shape {delta.delta.shape} does not match "
                         f"image shape {x.pixels.shape}")
    pixels = x.pixels + delta.delta
    if use_clip:
        pixels = np.clip(pixels, PIXEL_MIN, PIXEL_MAX)
    return x.with_pixels(pixels)


def gaussian_perturb(x: ImageSample, mean: float, var: float, seed: int) -> ImageSample:
    """Additive normal noise drawn in the normalized [0, 1] domain.

    The draw is scaled by 255 into pixel units and the result clipped to
    [0, 255], so clipping in normalized space and in pixel space agree.
    """
    if var < 0:
        raise ValueError(f"var must be >= 0, got {var}")
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, np.sqrt(var), size=x.pixels.shape) * 255.0
    return x.with_pixels(np.clip(x.pixels + noise, PIXEL_MIN, PIXEL_MAX))


@dataclass(frozen=True)
class PerturbBatchResult:
    """Perturbed tuples plus per-image records in batch frame order.

    records hold the realized delta (perturbed minus original, i.e. after
    any clipping); raw_max_abs is the largest |delta| after the threshold
    stage but before clipping, which is the quantity the threshold bound
    constrains.
    """

    batch: list[SampleTuple]
    records: list[Perturbation]
    threshold: ThresholdValue | None
    raw_max_abs: float

    def realized_max_abs(self) -> float:
        return max((r.max_abs() for r in self.records), default=0.0)


def perturb_batch(model: PoseRegressor, batch: Sequence[SampleTuple], truths: Sequence,
                  params: LossParams, cfg: PerturberConfig,
                  *, rng: np.random.Generator | None = None,
                  threshold=None) -> PerturbBatchResult:
    """Run the full perturbation pipeline on a batch of tuples.

    Gradient methods: threshold (optional) -> frozen-model input gradient
    -> raw perturbation -> magnitude clamp (optional) -> add and clip
    (optional). Gaussian ignores gradients entirely; none returns the batch
    unchanged. The model is only read, never written.

    threshold lets a caller that already computed the cap (for audit or a
    per-epoch reading) pass it in: a ThresholdValue, or a list of them for
    per-image mode. When omitted it is derived from this batch.
    """
    batch = list(batch)
    if cfg.method == "none":
        zero = [Perturbation(delta=np.zeros_like(s.pixels))
                for t in batch for s in t.samples]
        return PerturbBatchResult(batch=batch, records=zero, threshold=None,
                                  raw_max_abs=0.0)

    if cfg.method == "gaussian":
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        out, records = [], []
        for tup in batch:
            samples = []
            for s in tup.samples:
                # independent per-image seed from the stream, deterministic order
                adv = gaussian_perturb(s, cfg.gaussian_mean, cfg.gaussian_var,
                                       int(rng.integers(0, 2 ** 63 - 1)))
                records.append(Perturbation(delta=adv.pixels - s.pixels))
                samples.append(adv)
            out.append(SampleTuple(samples=samples))
        raw = max((r.max_abs() for r in records), default=0.0)
        return PerturbBatchResult(batch=out, records=records, threshold=None,
                                  raw_max_abs=raw)

    thresholds: list[ThresholdValue] | None = None
    if isinstance(threshold, (list, tuple)):
        thresholds, threshold = list(threshold), None
    if cfg.use_threshold and threshold is None and thresholds is None:
        if cfg.threshold_per_image:
            thresholds = compute_threshold_per_image(batch, cfg.eta)
        else:
            threshold = compute_threshold(batch, cfg.eta)
    if not cfg.use_threshold:
        threshold = thresholds = None

    grads = model.input_gradient_batch(batch, truths, params)

    out, records = [], []
    raw_max = 0.0
    i = 0
    for tup in batch:
        samples = []
        for s in tup.samples:
            delta = raw_perturbation(grads[i], cfg.epsilon, cfg.pow)
            if cfg.use_threshold:
                delta = apply_threshold(delta, thresholds[i] if thresholds else threshold)
            raw_max = max(raw_max, delta.max_abs())
            adv = make_adversarial(s, delta, cfg.use_clip)
            records.append(Perturbation(delta=adv.pixels - s.pixels))
            samples.append(adv)
            i += 1
        out.append(SampleTuple(samples=samples))
    return PerturbBatchResult(batch=out, records=records, threshold=threshold,
                              raw_max_abs=raw_max)


def export_records(result: PerturbBatchResult, cfg: PerturberConfig, out_dir) -> None:
    """Dump realized deltas as one .npy stack plus a text manifest."""
    os.makedirs(out_dir, exist_ok=True)
    deltas = np.stack([r.delta for r in result.records])
    np.save(os.path.join(out_dir, "deltas.npy"), deltas)
    manifest = {
        "method": cfg.method,
        "epsilon": cfg.epsilon,
        "pow": cfg.pow,
        "eta": cfg.eta,
        "eta_th": result.threshold.eta_th if result.threshold else None,
        "seed": cfg.seed,
        "n_images": len(result.records),
        "raw_max_abs": result.raw_max_abs,
    }
    with open(os.path.join(out_dir, "records_manifest.txt"), "w") as f:
        for key, value in manifest.items():
            f.write(f"{key}={json.dumps(value)}\n")
