"""Training orchestration: adversarial augmentation loop, ablation, mixing.

Per batch the loop runs the augmentation pipeline in a fixed order
(threshold, frozen-weight gradient, magnitude clamp, pixel clip, weight
update) and writes one newline-delimited JSON record per stage to an
audit log, so the order and every realized bound are externally
checkable. Parameter checksums taken before and after the gradient stage
witness that perturbation never touches the weights.

Everything derives its randomness from (seed, epoch) or (seed, epoch,
batch), so a config+seed pair reproduces loss curves and checkpoints
bitwise.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import Dataset, WeatherTag, poses_to_matrix
from .evaluate import EvalResult, evaluate
from .loss import LossParams
from .model import NonFiniteLossError, PoseRegressor, arch_for_poses, save_checkpoint
from .perturb import (PerturberConfig, compute_threshold,
                      compute_threshold_per_image, perturb_batch)
from .synth import SceneSpec, TrajectorySpec, generate_dataset

MIX_MODES = ("original_plus_adversarial", "adversarial_only", "original_only")

GRADIENT_METHODS = ("rada", "fgsm", "fgm")


@dataclass(frozen=True)
class TrainConfig:
    """Loop knobs; perturber carries the attack-side settings.

    threshold_per_epoch switches the cap from per-batch (default) to one
    value computed over the whole dataset at the start of each epoch.
    checkpoint_every=0 disables intermediate checkpoints.
    """

    epochs: int = 5
    batch_tuples: int = 8
    lr: float = 3e-3
    perturber: PerturberConfig = field(default_factory=PerturberConfig)
    mix_mode: str = "original_plus_adversarial"
    seed: int = 0
    checkpoint_every: int = 0
    threshold_per_epoch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_tuples < 1:
            raise ValueError(f"batch_tuples must be >= 1, got {self.batch_tuples}")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.mix_mode not in MIX_MODES:
            raise ValueError(f"unknown mix_mode {self.mix_mode!r}, "
                             f"expected one of {MIX_MODES}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, "
                             f"got {self.checkpoint_every}")


@dataclass
class TrainReport:
    loss_curve: list[float]
    eta_th_per_epoch: list[list[float]]
    wall_clock_per_epoch: list[float]
    checkpoint_path: str | None
    audit_path: str | None
    steps: int
    aborted: bool = False

    def to_dict(self) -> dict:
        return {"loss_curve": self.loss_curve,
                "eta_th_per_epoch": self.eta_th_per_epoch,
                "wall_clock_per_epoch": self.wall_clock_per_epoch,
                "checkpoint_path": self.checkpoint_path,
                "audit_path": self.audit_path,
                "steps": self.steps,
                "aborted": self.aborted}


class _AuditLog:
    """Sequenced NDJSON writer; records stay in memory when path is None."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[dict] = []
        self._seq = 0
        self._fh = open(path, "w") if path else None

    def write(self, stage: str, **fields):
        rec = {"seq": self._seq, "stage": stage}
        rec.update(fields)
        self._seq += 1
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _epoch_batches(n_tuples: int, batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng((seed, 0xBA7C, epoch)).permutation(n_tuples)
    return [order[i:i + batch] for i in range(0, n_tuples, batch)]


def run_training(dataset: Dataset, model: PoseRegressor, cfg: TrainConfig,
                 *, out_dir=None, loss_params: LossParams | None = None
                 ) -> tuple[PoseRegressor, LossParams, TrainReport]:
    """Adversarially augmented training over the dataset's tuples.

    Per batch: compute the threshold, take input gradients with the weights
    frozen, build the raw perturbation, clamp it, add and clip, then update
    on the set selected by mix_mode (original first, then adversarial, when
    both). Adversarial samples are regenerated from the current weights
    every time, never precomputed.

    On a non-finite loss the run aborts: the last good state is what gets
    checkpointed, the report so far is attached to the exception, and the
    error re-raises.

    Returns (trained model, loss params, report).
    """
    if dataset.dims != tuple(model.input_dims):
        raise ValueError(f"dataset dims {dataset.dims} do not match model "
                         f"input dims {model.input_dims}")
    params = loss_params if loss_params is not None else LossParams()
    tuples = list(dataset.tuples)
    truths = [poses_to_matrix(t.poses()) for t in tuples]
    audit_path = checkpoint_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        audit_path = os.path.join(out_dir, "audit.ndjson")
        checkpoint_path = os.path.join(out_dir, "final.ckpt")
    audit = _AuditLog(audit_path)
    report = TrainReport(loss_curve=[], eta_th_per_epoch=[], wall_clock_per_epoch=[],
                         checkpoint_path=checkpoint_path, audit_path=audit_path,
                         steps=0)
    pcfg = cfg.perturber
    gradient_method = pcfg.method in GRADIENT_METHODS
    want_adv = cfg.mix_mode != "original_only"

    def _save(m, p, path):
        if path is not None:
            save_checkpoint(m, p, path, seed=cfg.seed, steps=report.steps,
                            config_hash="")

    def _step(m, p, b, t):
        m, p, loss = m.train_step(b, t, p, cfg.lr)
        report.steps += 1
        return m, p, loss

    last_good = (model, params)
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            epoch_losses: list[float] = []
            epoch_etas: list[float] = []
            epoch_threshold = None
            if cfg.threshold_per_epoch and gradient_method and pcfg.use_threshold \
                    and want_adv:
                epoch_threshold = compute_threshold(tuples, pcfg.eta)
            for b, idx in enumerate(_epoch_batches(len(tuples), cfg.batch_tuples,
                                                   cfg.seed, epoch)):
                batch = [tuples[i] for i in idx]
                btruth = [truths[i] for i in idx]
                base = {"epoch": epoch, "batch": b,
                        "tuples": [int(t.frame_indices[0]) for t in batch]}

                threshold = None
                eta_th = None
                if gradient_method and pcfg.use_threshold and want_adv:
                    if epoch_threshold is not None:
                        threshold = epoch_threshold
                    elif pcfg.threshold_per_image:
                        threshold = compute_threshold_per_image(batch, pcfg.eta)
                    else:
                        threshold = compute_threshold(batch, pcfg.eta)
                    single = threshold if not isinstance(threshold, list) \
                        else max(threshold, key=lambda t: t.eta_th)
                    eta_th = single.eta_th
                    audit.write("threshold", **base, eta=pcfg.eta,
                                eta_th=eta_th, x_max=single.x_max,
                                x_min=single.x_min)
                    epoch_etas.append(eta_th)

                adv_batch = None
                max_abs_raw = max_abs_real = None
                if want_adv:
                    checksum_before = model.checksum()
                    rng = np.random.default_rng((cfg.seed, 0xAD5, epoch, b))
                    res = perturb_batch(model, batch, btruth, params, pcfg,
                                        rng=rng, threshold=threshold)
                    checksum_after = model.checksum()
                    if checksum_before != checksum_after:
                        raise RuntimeError("weights changed during perturbation; "
                                           "freeze contract violated")
                    max_abs_raw = res.raw_max_abs
                    max_abs_real = res.realized_max_abs()
                    adv_batch = res.batch
                    if gradient_method:
                        audit.write("gradient", **base,
                                    theta_before=checksum_before,
                                    theta_after=checksum_after)
                        audit.write("clamp", **base, eta_th=eta_th,
                                    use_threshold=pcfg.use_threshold,
                                    max_abs_raw=max_abs_raw)
                        audit.write("clip", **base, use_clip=pcfg.use_clip,
                                    max_abs_realized=max_abs_real)

                step_losses = []
                if cfg.mix_mode in ("original_only", "original_plus_adversarial"):
                    model, params, loss = _step(model, params, batch, btruth)
                    step_losses.append(loss)
                if adv_batch is not None:
                    model, params, loss = _step(model, params, adv_batch, btruth)
                    step_losses.append(loss)

                batch_loss = float(np.mean(step_losses))
                epoch_losses.append(batch_loss)
                audit.write("update", **base, losses=step_losses)
                audit.write("summary", **base, eta_th=eta_th,
                            max_abs_delta=max_abs_raw,
                            max_abs_realized=max_abs_real, loss=batch_loss)
                last_good = (model, params)

            report.loss_curve.append(float(np.mean(epoch_losses)))
            report.eta_th_per_epoch.append(epoch_etas)
            report.wall_clock_per_epoch.append(time.perf_counter() - t0)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 \
                    and out_dir is not None:
                _save(model, params,
                      os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt"))
    except NonFiniteLossError as err:
        model, params = last_good
        report.aborted = True
        _save(model, params, checkpoint_path)
        audit.write("abort", error=str(err))
        audit.close()
        err.report = report
        raise
    _save(model, params, checkpoint_path)
    audit.close()
    return model, params, report


def model_for_dataset(dataset: Dataset, seed: int) -> PoseRegressor:
    """Fresh model sized to the dataset, output affine fitted to its poses."""
    poses = poses_to_matrix([f.pose for f in dataset.frames()])
    return PoseRegressor.create(input_dims=dataset.dims, seed=seed,
                                arch=arch_for_poses(poses))


ABLATION_VARIANTS = ("complete", "no_clip", "no_threshold", "no_threshold_no_clip")


@dataclass(frozen=True)
class AblationEntry:
    variant: str
    model: PoseRegressor
    report: TrainReport
    eval_result: EvalResult


def run_ablation(dataset: Dataset, cfg: TrainConfig, test_dataset: Dataset,
                 *, out_dir=None,
                 progress: Callable[[str], None] | None = None
                 ) -> dict[str, AblationEntry]:
    """Train the four threshold/clip variants with identical seeds.

    Every variant starts from the same initial weights and consumes
    identical batches in identical order (both derive from cfg.seed only),
    so differences in test error isolate the two safeguards.
    """
    flags = {"complete": (True, True), "no_clip": (True, False),
             "no_threshold": (False, True), "no_threshold_no_clip": (False, False)}
    out: dict[str, AblationEntry] = {}
    for variant in ABLATION_VARIANTS:
        if progress:
            progress(f"training variant {variant}")
        use_th, use_clip = flags[variant]
        vcfg = replace(cfg, perturber=cfg.perturber.with_flags(
            use_threshold=use_th, use_clip=use_clip))
        vdir = os.path.join(out_dir, variant) if out_dir is not None else None
        model = model_for_dataset(dataset, cfg.seed)
        trained, _, report = run_training(dataset, model, vcfg, out_dir=vdir)
        out[variant] = AblationEntry(variant=variant, model=trained, report=report,
                                     eval_result=evaluate(trained, test_dataset))
    return out


def write_ablation_csv(entries: dict[str, AblationEntry], path) -> None:
    import csv
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "weather", "t_err", "r_err"])
        for variant in ABLATION_VARIANTS:
            res = entries[variant].eval_result
            for weather, m in sorted(res.per_weather.items()):
                writer.writerow([variant, weather,
                                 f"{m.mean_t_err:.9g}", f"{m.mean_r_err:.9g}"])
            writer.writerow([variant, "average",
                             f"{res.overall.mean_t_err:.9g}",
                             f"{res.overall.mean_r_err:.9g}"])


@dataclass(frozen=True)
class MixingRow:
    """One target-weather fraction: (baseline, perturbed-training) metric pairs."""

    fraction: float
    base_target_t: float
    rada_target_t: float
    base_target_r: float
    rada_target_r: float
    base_source_t: float
    rada_source_t: float
    base_source_r: float
    rada_source_r: float


MIXING_COLUMNS = ("fraction",
                  "base_target_t", "rada_target_t", "base_target_r", "rada_target_r",
                  "base_source_t", "rada_source_t", "base_source_r", "rada_source_r")


def run_mixing_study(scene_spec: SceneSpec, fractions, cfg: TrainConfig,
                     *, traj_spec: TrajectorySpec | None = None,
                     source_weather: WeatherTag = WeatherTag.OVERCAST,
                     target_weather: WeatherTag = WeatherTag.RAIN,
                     tuple_len: int = 3, test_frames: int | None = None,
                     progress: Callable[[str], None] | None = None
                     ) -> list[MixingRow]:
    """Vary the share of target-domain weather in the training set.

    For each fraction, trains a baseline (no augmentation) and a perturbed
    model on a (1-f) source / f target mix, then evaluates both on pure
    target and pure source test trajectories. Datasets and model init
    share seeds across fractions, so rows differ only in the mix.
    """
    traj = traj_spec or TrajectorySpec()
    src, tgt = WeatherTag(source_weather), WeatherTag(target_weather)
    if src == tgt:
        raise ValueError("source and target weather must differ")
    n_test = test_frames or max(20, scene_spec.trajectory_len // 2)
    test_target = generate_dataset(scene_spec, traj, {tgt: 1.0}, tuple_len,
                                   n_frames=n_test, phase_seed=1)
    test_source = generate_dataset(scene_spec, traj, {src: 1.0}, tuple_len,
                                   n_frames=n_test, phase_seed=2)
    rows = []
    for frac in fractions:
        frac = float(frac)
        if not (0 <= frac < 1):
            raise ValueError(f"fractions must be in [0, 1), got {frac}")
        mix = {src: 1.0 - frac}
        if frac > 0:
            mix[tgt] = frac
        train_ds = generate_dataset(scene_spec, traj, mix, tuple_len)
        results = {}
        for label in ("base", "rada"):
            if progress:
                progress(f"fraction {frac:g}: training {label}")
            if label == "base":
                vcfg = replace(cfg, perturber=replace(cfg.perturber, method="none"),
                               mix_mode="original_only")
            else:
                vcfg = cfg
            model = model_for_dataset(train_ds, cfg.seed)
            trained, _, _ = run_training(train_ds, model, vcfg)
            results[label] = (evaluate(trained, test_target),
                              evaluate(trained, test_source))
        (bt, bs), (rt, rs) = results["base"], results["rada"]
        rows.append(MixingRow(
            fraction=frac,
            base_target_t=bt.overall.mean_t_err, rada_target_t=rt.overall.mean_t_err,
            base_target_r=bt.overall.mean_r_err, rada_target_r=rt.overall.mean_r_err,
            base_source_t=bs.overall.mean_t_err, rada_source_t=rs.overall.mean_t_err,
            base_source_r=bs.overall.mean_r_err, rada_source_r=rs.overall.mean_r_err))
    return rows


def write_mixing_csv(rows: list[MixingRow], path) -> None:
    import csv
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MIXING_COLUMNS)
        for row in rows:
            writer.writerow([f"{getattr(row, col):.9g}" for col in MIXING_COLUMNS])


def read_mixing_csv(path) -> list[MixingRow]:
    import csv
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != MIXING_COLUMNS:
            raise ValueError(f"unexpected mixing CSV header: {header}")
        return [MixingRow(**{c: float(v) for c, v in zip(MIXING_COLUMNS, line)})
                for line in reader]
