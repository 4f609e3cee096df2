"""Per-weather pose error metrics and trajectory export.

Per frame: translation error is the Euclidean norm of (t - t*), rotation
error the absolute angle between the predicted and true orientations in
degrees. Frames aggregate by weather tag; the overall row is the
frame-weighted mean over all frames (so it equals the weighted mean of the
per-weather rows). Means are the headline metric; medians are emitted too,
clearly labeled, since pose papers often report them.

No trajectory alignment is performed: absolute pose against absolute
ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import Dataset, WeatherTag, WEATHER_ORDER, rotation_error_degrees
from .model import PoseRegressor

# Presentation order for reports: held-out conditions first, then anything
# else (training weather), then the overall row.
TABLE_ORDER = (WeatherTag.SUNNY, WeatherTag.OVEREXPOSURE, WeatherTag.RAIN,
               WeatherTag.SNOW)


@dataclass(frozen=True)
class WeatherMetrics:
    mean_t_err: float
    mean_r_err: float
    median_t_err: float
    median_r_err: float
    n_frames: int


@dataclass(frozen=True)
class EvalResult:
    per_weather: dict[str, WeatherMetrics]
    overall: WeatherMetrics

    def __post_init__(self):
        total = sum(m.n_frames for m in self.per_weather.values())
        if total != self.overall.n_frames:
            raise ValueError(f"overall n_frames {self.overall.n_frames} != "
                             f"sum of per-weather counts {total}")
        weighted = sum(m.mean_t_err * m.n_frames for m in self.per_weather.values())
        if abs(weighted / total - self.overall.mean_t_err) > 1e-9:
            raise ValueError("overall mean_t_err is not the frame-weighted mean")

    def to_dict(self) -> dict:
        def metr(m: WeatherMetrics) -> dict:
            return {"mean_t_err": m.mean_t_err, "mean_r_err": m.mean_r_err,
                    "median_t_err": m.median_t_err, "median_r_err": m.median_r_err,
                    "n_frames": m.n_frames}
        return {"per_weather": {k: metr(m) for k, m in self.per_weather.items()},
                "overall": metr(self.overall)}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        def metr(m: dict) -> WeatherMetrics:
            return WeatherMetrics(**m)
        return cls(per_weather={k: metr(v) for k, v in d["per_weather"].items()},
                   overall=metr(d["overall"]))


def _metrics(t_err: np.ndarray, r_err: np.ndarray) -> WeatherMetrics:
    return WeatherMetrics(
        mean_t_err=float(t_err.mean()), mean_r_err=float(r_err.mean()),
        median_t_err=float(np.median(t_err)), median_r_err=float(np.median(r_err)),
        n_frames=int(t_err.size))


def frame_errors(model: PoseRegressor, dataset: Dataset,
                 batch: int = 256) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(t_err, r_err, weather_tag) per unique frame, sorted by frame index."""
    frames = dataset.frames()
    if not frames:
        raise ValueError("dataset has no frames to evaluate")
    t_err = np.empty(len(frames))
    r_err = np.empty(len(frames))
    tags = [f.weather_tag.value for f in frames]
    for start in range(0, len(frames), batch):
        chunk = frames[start:start + batch]
        preds = model.forward_pixels(np.stack([f.pixels for f in chunk]))
        for i, f in enumerate(chunk):
            t_err[start + i] = float(np.linalg.norm(preds[i, :3] - f.pose.t))
            r_err[start + i] = rotation_error_degrees(preds[i, 3:], f.pose.w)
    return t_err, r_err, tags


def evaluate(model: PoseRegressor, dataset: Dataset) -> EvalResult:
    """Mean/median translation and rotation errors per weather and overall."""
    t_err, r_err, tags = frame_errors(model, dataset)
    tags = np.asarray(tags)
    per_weather = {}
    for tag in sorted(set(tags.tolist())):
        sel = tags == tag
        per_weather[tag] = _metrics(t_err[sel], r_err[sel])
    return EvalResult(per_weather=per_weather, overall=_metrics(t_err, r_err))


def format_table(result: EvalResult) -> str:
    """Fixed-width report, held-out weather columns first, then average."""
    listed = [t.value for t in TABLE_ORDER if t.value in result.per_weather]
    extra = [k for k in result.per_weather if k not in listed]
    rows = [(name, result.per_weather[name]) for name in listed + sorted(extra)]
    rows.append(("average", result.overall))
    lines = [f"{'condition':<14} {'mean t':>10} {'mean r(deg)':>12} "
             f"{'med t':>10} {'med r':>10} {'frames':>7}"]
    for name, m in rows:
        lines.append(f"{name:<14} {m.mean_t_err:>10.4f} {m.mean_r_err:>12.4f} "
                     f"{m.median_t_err:>10.4f} {m.median_r_err:>10.4f} "
                     f"{m.n_frames:>7d}")
    return "\n".join(lines)


def save_eval_json(result: EvalResult, path) -> None:
    with open(path, "w") as f:
        json.dump(result.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def export_trajectory(model: PoseRegressor, dataset: Dataset, path,
                      *, plot_path=None) -> None:
    """CSV of ground-truth vs predicted positions per frame.

    Values are written with 9 significant digits, enough to round-trip the
    comparison in tests; ground truth is passed through from the dataset
    poses untouched. Optionally renders a top-down plot of both polylines.
    """
    frames = dataset.frames()
    if not frames:
        raise ValueError("dataset has no frames to export")
    preds = []
    for start in range(0, len(frames), 256):
        chunk = frames[start:start + 256]
        preds.append(model.forward_pixels(np.stack([f.pixels for f in chunk])))
    pred = np.concatenate(preds)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_index", "gt_t1", "gt_t2", "gt_t3",
                         "pred_t1", "pred_t2", "pred_t3"])
        for i, fr in enumerate(frames):
            writer.writerow([fr.frame_index]
                            + [f"{v:.9g}" for v in fr.pose.t]
                            + [f"{v:.9g}" for v in pred[i, :3]])
    if plot_path is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        gt = np.stack([f.pose.t for f in frames])
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(gt[:, 0], gt[:, 1], "k-", label="ground truth")
        ax.plot(pred[:, 0], pred[:, 1], "r-", label="predicted")
        ax.set_aspect("equal")
        ax.set_xlabel("x (scene units)")
        ax.set_ylabel("y (scene units)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
