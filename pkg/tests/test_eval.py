"""Evaluation metrics: exactness on a controllable model, aggregation, export."""

import csv

import numpy as np
import pytest

from radaug.core import Dataset, ImageSample, Pose, SampleTuple, WeatherTag
from radaug.evaluate import (
    EvalResult,
    WeatherMetrics,
    evaluate,
    export_trajectory,
    format_table,
    save_eval_json,
)
from radaug.model import PoseRegressor

DIMS = (8, 8, 3)


def _constant_model(pose_vec):
    """Model whose output is `pose_vec` for any input."""
    model = PoseRegressor.create(DIMS, seed=0)
    params = dict(model.params)
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.asarray(pose_vec, dtype=np.float64)
    return PoseRegressor(DIMS, params, model.arch)


def _frames(start, truths, tag):
    rng = np.random.default_rng(start)
    out = []
    for k, truth in enumerate(truths):
        out.append(ImageSample(pixels=rng.uniform(0, 255, size=DIMS),
                               pose=truth, weather_tag=tag,
                               frame_index=start + k))
    return out


def _dataset(*tuples):
    return Dataset(tuples=tuple(SampleTuple(samples=tuple(f)) for f in tuples))


class TestEvaluateExactness:
    def test_perfect_model_scores_zero(self):
        truth = Pose(t=[1.0, 2.0, 3.0], w=[0.1, 0.0, -0.2])
        ds = _dataset(_frames(0, [truth, truth], WeatherTag.RAIN))
        res = evaluate(_constant_model(truth.as_vector()), ds)
        assert res.overall.mean_t_err == 0.0
        assert res.overall.mean_r_err == 0.0
        assert res.overall.n_frames == 2

    def test_three_four_five_translation_error(self):
        truth = Pose(t=[0.0, 0.0, 0.0], w=[0.0, 0.0, 0.0])
        ds = _dataset(_frames(0, [truth, truth], WeatherTag.SNOW))
        res = evaluate(_constant_model([3.0, 4.0, 0.0, 0.0, 0.0, 0.0]), ds)
        assert res.overall.mean_t_err == 5.0
        assert res.overall.median_t_err == 5.0

    def test_rotation_error_known_angle(self):
        truth = Pose(t=[0.0, 0.0, 0.0], w=[0.0, 0.0, 0.0])
        ds = _dataset(_frames(0, [truth, truth], WeatherTag.SNOW))
        res = evaluate(_constant_model([0, 0, 0, 0.25, 0, 0]), ds)
        np.testing.assert_allclose(res.overall.mean_r_err, np.degrees(0.5), rtol=1e-12)

    def test_weighted_mean_over_weather_groups(self):
        rain_truth = Pose(t=[0.0, 0.0, 0.0], w=[0.0, 0.0, 0.0])
        snow_truth = Pose(t=[3.0, 4.0, 0.0], w=[0.0, 0.0, 0.0])
        ds = _dataset(_frames(0, [rain_truth] * 2, WeatherTag.RAIN),
                      _frames(2, [snow_truth] * 3, WeatherTag.SNOW))
        res = evaluate(_constant_model([3.0, 4.0, 0.0, 0.0, 0.0, 0.0]), ds)
        assert res.per_weather["rain"].mean_t_err == 5.0
        assert res.per_weather["rain"].n_frames == 2
        assert res.per_weather["snow"].mean_t_err == 0.0
        assert res.per_weather["snow"].n_frames == 3
        # overall = (2 * 5 + 3 * 0) / 5
        assert res.overall.mean_t_err == 2.0
        assert res.overall.n_frames == 5

    def test_rotation_errors_bounded(self, small_dataset, small_model):
        res = evaluate(small_model, small_dataset)
        for m in list(res.per_weather.values()) + [res.overall]:
            assert 0.0 <= m.mean_r_err <= 180.0
            assert 0.0 <= m.median_r_err <= 180.0

    def test_tuple_order_does_not_matter(self):
        truth = Pose(t=[1.0, 1.0, 0.0], w=[0.0, 0.0, 0.1])
        a = SampleTuple(samples=tuple(_frames(0, [truth] * 2, WeatherTag.RAIN)))
        b = SampleTuple(samples=tuple(_frames(2, [truth] * 2, WeatherTag.SNOW)))
        model = _constant_model([0.5, 1.0, 0.0, 0.0, 0.0, 0.0])
        r1 = evaluate(model, Dataset(tuples=(a, b)))
        r2 = evaluate(model, Dataset(tuples=(b, a)))
        assert r1 == r2

    def test_overlapping_windows_count_frames_once(self):
        truth = Pose(t=[0.0, 0.0, 0.0], w=[0.0, 0.0, 0.0])
        frames = _frames(0, [truth] * 3, WeatherTag.RAIN)
        a = SampleTuple(samples=tuple(frames[:2]))
        b = SampleTuple(samples=tuple(frames[1:]))
        res = evaluate(_constant_model([1.0, 0, 0, 0, 0, 0]), Dataset(tuples=(a, b)))
        assert res.overall.n_frames == 3


class TestEvalResult:
    def test_inconsistent_overall_rejected(self):
        m = WeatherMetrics(mean_t_err=1.0, mean_r_err=0.0, median_t_err=1.0,
                           median_r_err=0.0, n_frames=2)
        bad_overall = WeatherMetrics(mean_t_err=9.0, mean_r_err=0.0,
                                     median_t_err=1.0, median_r_err=0.0, n_frames=2)
        with pytest.raises(ValueError, match="weighted mean"):
            EvalResult(per_weather={"rain": m}, overall=bad_overall)

    def test_frame_count_mismatch_rejected(self):
        m = WeatherMetrics(mean_t_err=1.0, mean_r_err=0.0, median_t_err=1.0,
                           median_r_err=0.0, n_frames=2)
        wrong = WeatherMetrics(mean_t_err=1.0, mean_r_err=0.0, median_t_err=1.0,
                               median_r_err=0.0, n_frames=3)
        with pytest.raises(ValueError, match="n_frames"):
            EvalResult(per_weather={"rain": m}, overall=wrong)

    def test_dict_round_trip(self, small_dataset, small_model):
        res = evaluate(small_model, small_dataset)
        again = EvalResult.from_dict(res.to_dict())
        assert again == res

    def test_json_round_trip(self, tmp_path, small_dataset, small_model):
        import json
        res = evaluate(small_model, small_dataset)
        save_eval_json(res, tmp_path / "eval.json")
        loaded = json.loads((tmp_path / "eval.json").read_text())
        assert EvalResult.from_dict(loaded) == res


class TestFormatTable:
    def test_heldout_conditions_before_average(self):
        truth = Pose(t=[0.0, 0.0, 0.0], w=[0.0, 0.0, 0.0])
        ds = _dataset(_frames(0, [truth] * 2, WeatherTag.SNOW),
                      _frames(2, [truth] * 2, WeatherTag.RAIN),
                      _frames(4, [truth] * 2, WeatherTag.OVERCAST))
        table = format_table(evaluate(_constant_model([1, 0, 0, 0, 0, 0]), ds))
        lines = table.splitlines()
        names = [ln.split()[0] for ln in lines[1:]]
        assert names == ["rain", "snow", "overcast", "average"]

    def test_reports_all_metrics(self, small_dataset, small_model):
        table = format_table(evaluate(small_model, small_dataset))
        head = table.splitlines()[0]
        for col in ("condition", "mean t", "mean r(deg)", "med t", "med r", "frames"):
            assert col in head


class TestExportTrajectory:
    def _export(self, tmp_path, model, ds, **kw):
        path = tmp_path / "traj.csv"
        export_trajectory(model, ds, path, **kw)
        with open(path, newline="") as f:
            return list(csv.reader(f))

    def test_row_per_frame_with_header(self, tmp_path, small_dataset, small_model):
        rows = self._export(tmp_path, small_model, small_dataset)
        assert rows[0] == ["frame_index", "gt_t1", "gt_t2", "gt_t3",
                           "pred_t1", "pred_t2", "pred_t3"]
        assert len(rows) == 1 + len(small_dataset.frames())

    def test_values_round_trip_at_nine_digits(self, tmp_path, small_dataset, small_model):
        rows = self._export(tmp_path, small_model, small_dataset)[1:]
        frames = small_dataset.frames()
        preds = small_model.forward_pixels(np.stack([f.pixels for f in frames]))
        for row, frame, pred in zip(rows, frames, preds):
            assert int(row[0]) == frame.frame_index
            np.testing.assert_allclose([float(v) for v in row[1:4]], frame.pose.t,
                                       rtol=1e-8)
            np.testing.assert_allclose([float(v) for v in row[4:7]], pred[:3],
                                       rtol=1e-8)

    def test_plot_file_written(self, tmp_path, small_dataset, small_model):
        path = tmp_path / "traj.csv"
        plot = tmp_path / "traj.png"
        export_trajectory(small_model, small_dataset, path, plot_path=plot)
        assert plot.stat().st_size > 0
