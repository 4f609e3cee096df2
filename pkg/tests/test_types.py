"""Value types: poses, rotation metrics, image samples, tuples, datasets."""

import numpy as np
import pytest

from radaug.core import (
    Dataset,
    ImageSample,
    Perturbation,
    Pose,
    RelativePose,
    SampleTuple,
    WEATHER_ORDER,
    WeatherTag,
    logquat_to_quat,
    matrix_to_poses,
    pose_compose_relative,
    poses_to_matrix,
    rotation_error_degrees,
)


def _quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (w, x, y, z); independent oracle."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _angle_between_degrees(w_a, w_b):
    """Oracle: angular distance via the rotation-matrix trace formula."""
    r_a = _quat_to_matrix(logquat_to_quat(w_a))
    r_b = _quat_to_matrix(logquat_to_quat(w_b))
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


class TestPose:
    def test_vector_round_trip(self):
        p = Pose(t=[1.0, -2.0, 3.5], w=[0.1, 0.0, -0.2])
        q = Pose.from_vector(p.as_vector())
        assert np.array_equal(p.t, q.t)
        assert np.array_equal(p.w, q.w)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError, match="3-vector"):
            Pose(t=[1.0, 2.0], w=[0.0, 0.0, 0.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            Pose(t=[1.0, np.nan, 0.0], w=[0.0, 0.0, 0.0])

    def test_relative_is_componentwise_difference(self):
        p_i = Pose(t=[1.0, 2.0, 3.0], w=[0.1, 0.2, 0.3])
        p_j = Pose(t=[0.5, -1.0, 4.0], w=[0.0, 0.25, -0.1])
        rel = pose_compose_relative(p_i, p_j)
        assert isinstance(rel, RelativePose)
        np.testing.assert_allclose(rel.dt, p_i.t - p_j.t)
        np.testing.assert_allclose(rel.dw, p_i.w - p_j.w)
        np.testing.assert_allclose(rel.as_vector(), np.concatenate([rel.dt, rel.dw]))


class TestLogQuat:
    def test_zero_maps_to_identity(self):
        np.testing.assert_allclose(logquat_to_quat([0, 0, 0]), [1, 0, 0, 0])

    def test_known_axis_rotation(self):
        # |v| = pi/2 about x: q = (cos pi/2, sin pi/2, 0, 0) = (0, 1, 0, 0)
        q = logquat_to_quat([np.pi / 2, 0.0, 0.0])
        np.testing.assert_allclose(q, [0.0, 1.0, 0.0, 0.0], atol=1e-15)

    def test_unit_norm(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            w = rng.normal(size=3) * rng.uniform(0, 3)
            q = logquat_to_quat(w)
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_smooth_through_zero(self):
        # Tiny v should land next to the identity, no 0/0 blowup.
        q = logquat_to_quat([1e-13, 0.0, 0.0])
        assert np.all(np.isfinite(q))
        np.testing.assert_allclose(q, [1, 0, 0, 0], atol=1e-12)


class TestRotationError:
    def test_zero_for_equal_rotations(self):
        assert rotation_error_degrees([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 0.0

    def test_known_single_axis_angle(self):
        # logquat [a, 0, 0] rotates by 2a radians about x.
        a = 0.3
        err = rotation_error_degrees([0.0, 0.0, 0.0], [a, 0.0, 0.0])
        np.testing.assert_allclose(err, np.degrees(2 * a), rtol=1e-12)

    def test_matches_trace_formula_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            w_a = rng.normal(size=3) * rng.uniform(0, 1.5)
            w_b = rng.normal(size=3) * rng.uniform(0, 1.5)
            got = rotation_error_degrees(w_a, w_b)
            want = _angle_between_degrees(w_a, w_b)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            w_a = rng.normal(size=3)
            w_b = rng.normal(size=3)
            e_ab = rotation_error_degrees(w_a, w_b)
            e_ba = rotation_error_degrees(w_b, w_a)
            assert e_ab == e_ba
            assert 0.0 <= e_ab <= 180.0

    def test_triangle_inequality(self):
        rng = np.random.default_rng(47)
        for _ in range(100):
            w = [rng.normal(size=3) * 0.8 for _ in range(3)]
            e_ac = rotation_error_degrees(w[0], w[2])
            e_ab = rotation_error_degrees(w[0], w[1])
            e_bc = rotation_error_degrees(w[1], w[2])
            assert e_ac <= e_ab + e_bc + 1e-9


def _sample(idx, h=4, w=4, c=3, fill=0.0, tag=WeatherTag.OVERCAST):
    px = np.full((h, w, c), fill, dtype=np.float64)
    pose = Pose(t=[float(idx), 0.0, 0.0], w=[0.0, 0.0, 0.0])
    return ImageSample(pixels=px, pose=pose, weather_tag=tag, frame_index=idx)


class TestImageSample:
    def test_rejects_non_finite_pixels(self):
        px = np.zeros((4, 4, 3))
        px[1, 2, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            ImageSample(pixels=px, pose=Pose(t=[0, 0, 0], w=[0, 0, 0]),
                        weather_tag=WeatherTag.RAIN, frame_index=0)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match=r"\(H, W, C\)"):
            ImageSample(pixels=np.zeros((4, 4)), pose=Pose(t=[0, 0, 0], w=[0, 0, 0]),
                        weather_tag=WeatherTag.RAIN, frame_index=0)

    def test_in_range_boundaries(self):
        assert _sample(0, fill=0.0).in_range
        assert _sample(0, fill=255.0).in_range
        assert not _sample(0, fill=255.0001).in_range
        assert not _sample(0, fill=-0.0001).in_range

    def test_weather_tag_coerced_from_string(self):
        s = ImageSample(pixels=np.zeros((4, 4, 3)), pose=Pose(t=[0, 0, 0], w=[0, 0, 0]),
                        weather_tag="snow", frame_index=2)
        assert s.weather_tag is WeatherTag.SNOW

    def test_with_pixels_preserves_identity_fields(self):
        s = _sample(7, tag=WeatherTag.SUNNY)
        out = s.with_pixels(np.full((4, 4, 3), 9.0))
        assert out.frame_index == 7
        assert out.weather_tag is WeatherTag.SUNNY
        assert out.pose is s.pose
        assert float(out.pixels[0, 0, 0]) == 9.0
        # Source sample untouched.
        assert float(s.pixels[0, 0, 0]) == 0.0

    def test_dims(self):
        assert _sample(0, h=6, w=5, c=1).dims == (6, 5, 1)


class TestPerturbation:
    def test_max_abs(self):
        d = np.zeros((3, 3, 3))
        d[1, 1, 1] = -4.5
        assert Perturbation(delta=d).max_abs() == 4.5

    def test_max_abs_empty(self):
        assert Perturbation(delta=np.zeros((0, 3, 3))).max_abs() == 0.0

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            Perturbation(delta=np.zeros((3, 3)))


class TestSampleTuple:
    def test_requires_at_least_two(self):
        with pytest.raises(ValueError, match=">= 2"):
            SampleTuple(samples=(_sample(0),))

    def test_requires_consecutive_frames(self):
        with pytest.raises(ValueError, match="increase by 1"):
            SampleTuple(samples=(_sample(0), _sample(2)))

    def test_requires_matching_dims(self):
        with pytest.raises(ValueError, match="dims"):
            SampleTuple(samples=(_sample(0, h=4), _sample(1, h=5)))

    def test_stacks_and_indices(self):
        tup = SampleTuple(samples=(_sample(3), _sample(4), _sample(5)))
        assert len(tup) == 3
        assert tup.frame_indices == (3, 4, 5)
        assert tup.pixel_stack().shape == (3, 4, 4, 3)
        pm = tup.pose_matrix()
        assert pm.shape == (3, 6)
        np.testing.assert_allclose(pm[:, 0], [3.0, 4.0, 5.0])


class TestDataset:
    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            Dataset(tuples=())

    def test_rejects_mixed_dims(self):
        a = SampleTuple(samples=(_sample(0), _sample(1)))
        b = SampleTuple(samples=(_sample(0, h=8), _sample(1, h=8)))
        with pytest.raises(ValueError, match="dims"):
            Dataset(tuples=(a, b))

    def test_frames_deduplicates_overlapping_windows(self):
        # Sliding windows 0-1-2 and 1-2-3 share two frames.
        a = SampleTuple(samples=(_sample(0), _sample(1), _sample(2)))
        b = SampleTuple(samples=(_sample(1), _sample(2), _sample(3)))
        ds = Dataset(tuples=(a, b))
        frames = ds.frames()
        assert [s.frame_index for s in frames] == [0, 1, 2, 3]
        assert ds.dims == (4, 4, 3)
        assert len(ds) == 2


def test_pose_matrix_round_trip():
    rng = np.random.default_rng(5)
    poses = [Pose(t=rng.normal(size=3), w=rng.normal(size=3)) for _ in range(8)]
    m = poses_to_matrix(poses)
    assert m.shape == (8, 6)
    back = matrix_to_poses(m)
    for p, q in zip(poses, back):
        np.testing.assert_array_equal(p.as_vector(), q.as_vector())


def test_weather_order_covers_every_tag():
    assert set(WEATHER_ORDER) == set(WeatherTag)
    assert len(WEATHER_ORDER) == len(set(WEATHER_ORDER))
