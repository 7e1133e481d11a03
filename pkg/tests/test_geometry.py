"""Geometry primitives: pinhole projection, rigid transforms, image/cloud IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazemanip.errors import BehindCameraError, EmptyInputError, InvalidDepthError
from gazemanip.geometry import (
    Aabb,
    CameraIntrinsics,
    DepthImage,
    Pixel,
    PointCloud,
    RigidTransform,
    aabb_of,
    axis_angle_of,
    back_project,
    project,
    rotation_about_axis,
    rotation_rpy,
)
from conftest import make_intrinsics, random_rotation


def _K():
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


class TestPinhole:
    def test_back_project_hand_computed(self):
        # X = (320.5 - 320) * 0.750 / 600 = 0.000625
        # Y = (120.25 - 240) * 0.750 / 600 = -0.1496875
        p = back_project(Pixel(320.5, 120.25), 750, _K())
        np.testing.assert_allclose(p, [0.000625, -0.1496875, 0.75], rtol=0, atol=1e-15)

    def test_project_hand_computed(self):
        # u = 0.1 * 600 / 0.5 + 320 = 440 ; v = -0.2 * 600 / 0.5 + 240 = 0
        pix = project(np.array([0.1, -0.2, 0.5]), _K())
        np.testing.assert_allclose([pix.u, pix.v], [440.0, 0.0], atol=1e-12)

    def test_invalid_depth_rejected(self):
        with pytest.raises(InvalidDepthError):
            back_project(Pixel(10, 10), 0, _K())

    def test_behind_camera_rejected(self):
        with pytest.raises(BehindCameraError):
            project(np.array([0.0, 0.0, -0.1]), _K())
        with pytest.raises(BehindCameraError):
            project(np.array([0.0, 0.0, 0.0]), _K())

    @given(u=st.floats(0, 639), v=st.floats(0, 479), d=st.integers(1, 65535))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, u, v, d):
        k = _K()
        pix = project(back_project(Pixel(u, v), d, k), k)
        assert abs(pix.u - u) < 1e-9 and abs(pix.v - v) < 1e-9

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=0, height=480)


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        r = np.eye(3)
        r[0, 0] = 1.001
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = RigidTransform(random_rotation(rng), rng.normal(size=3))
            m = (t @ t.inverse()).as_matrix()
            np.testing.assert_allclose(m, np.eye(4), atol=1e-12)

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(4)
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(17, 3))
        expected = (t.as_matrix()[:3, :3] @ pts.T).T + t.as_matrix()[:3, 3]
        np.testing.assert_allclose(t.apply(pts), expected, atol=1e-12)

    def test_compose_associative(self):
        rng = np.random.default_rng(5)
        a, b, c = (RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(3))
        p = rng.normal(size=3)
        np.testing.assert_allclose(((a @ b) @ c).apply(p), (a @ (b @ c)).apply(p), atol=1e-12)

    def test_rotation_about_axis_hand_case(self):
        # 90 degrees about +Z sends +X to +Y
        r = rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.pi / 2)
        np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_rpy_composition_order(self):
        roll, pitch, yaw = 0.3, -0.2, 1.1
        rz = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw)
        ry = rotation_about_axis(np.array([0.0, 1.0, 0.0]), pitch)
        rx = rotation_about_axis(np.array([1.0, 0.0, 0.0]), roll)
        np.testing.assert_allclose(rotation_rpy(roll, pitch, yaw), rz @ ry @ rx, atol=1e-14)


class TestDepthImage:
    def test_from_meters_quantization(self):
        z = np.array([[0.0005, 0.6334], [np.inf, -0.2]])
        d = DepthImage.from_meters(z)
        # 0.0005 m -> rint(0.5) = 0 (banker's rounding), inf/negative -> invalid
        assert d.data.dtype == np.uint16
        np.testing.assert_array_equal(d.data, [[0, 633], [0, 0]])

    def test_png_round_trip_bit_exact(self):
        rng = np.random.default_rng(6)
        data = rng.integers(0, 65536, size=(48, 64), dtype=np.uint16)
        data[0, 0] = 0
        data[1, 1] = 65535
        d = DepthImage(64, 48, data)
        back = DepthImage.from_png_bytes(d.to_png_bytes())
        np.testing.assert_array_equal(back.data, data)
        assert back.width == 64 and back.height == 48

    def test_png_rejects_wrong_dtype(self):
        import cv2

        blob = cv2.imencode(".png", np.zeros((4, 4), dtype=np.uint8))[1].tobytes()
        with pytest.raises(ValueError):
            DepthImage.from_png_bytes(blob)


class TestPointCloud:
    def test_ply_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(33, 3))
        labels = rng.integers(0, 5, size=33)
        cloud = PointCloud(pts, labels)
        path = tmp_path / "c.ply"
        cloud.save_ply(path)
        back = PointCloud.load_ply(path)
        np.testing.assert_allclose(back.points, pts, atol=1e-6)
        np.testing.assert_array_equal(back.labels, labels)

    def test_ply_without_labels(self, tmp_path):
        cloud = PointCloud(np.array([[0.1, 0.2, 0.3]]))
        path = tmp_path / "c.ply"
        cloud.save_ply(path)
        back = PointCloud.load_ply(path)
        assert back.labels is None
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.nan, 0.0]]))


class TestAabb:
    def test_contains_and_intersects(self):
        a = Aabb(np.zeros(3), np.ones(3))
        b = Aabb(np.array([0.5, 0.5, 0.5]), np.array([2.0, 2.0, 2.0]))
        c = Aabb(np.array([2.5, 0.0, 0.0]), np.array([3.0, 1.0, 1.0]))
        assert a.contains(np.array([0.5, 0.5, 0.5]))
        assert not a.contains(np.array([1.5, 0.5, 0.5]))
        assert a.intersects(b) and not a.intersects(c)

    def test_distance_hand_case(self):
        a = Aabb(np.zeros(3), np.ones(3))
        c = Aabb(np.array([4.0, 5.0, 0.0]), np.array([5.0, 6.0, 1.0]))
        # gap is (3, 4, 0) -> 5
        np.testing.assert_allclose(a.distance_to(c), 5.0, atol=1e-12)

    def test_expanded(self):
        a = Aabb(np.zeros(3), np.ones(3)).expanded(0.25)
        np.testing.assert_allclose(a.min, -0.25)
        np.testing.assert_allclose(a.max, 1.25)

    def test_of_points_empty_raises(self):
        with pytest.raises(EmptyInputError):
            Aabb.of_points(np.zeros((0, 3)))

    def test_aabb_of_padding(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
        box = aabb_of(cloud, padding=0.1)
        np.testing.assert_allclose(box.min, [-0.1, -0.1, -0.1])
        np.testing.assert_allclose(box.max, [1.1, 2.1, 3.1])

    def test_min_greater_than_max_rejected(self):
        with pytest.raises(ValueError):
            Aabb(np.ones(3), np.zeros(3))


class TestAxisAngle:
    def test_identity_has_no_axis(self):
        axis, angle = axis_angle_of(np.eye(3))
        assert axis is None
        assert angle == 0.0

    def test_quarter_turn_about_z(self):
        axis, angle = axis_angle_of(rotation_about_axis(np.array([0.0, 0.0, 1.0]),
                                                        np.pi / 2))
        np.testing.assert_allclose(axis, [0.0, 0.0, 1.0], atol=1e-12)
        assert angle == pytest.approx(np.pi / 2)

    def test_half_turn_recovers_the_axis(self):
        # the skew part vanishes at pi; axis sign is arbitrary there
        want = np.array([1.0, 2.0, -0.5])
        want = want / np.linalg.norm(want)
        axis, angle = axis_angle_of(rotation_about_axis(want, np.pi))
        assert angle == pytest.approx(np.pi)
        assert abs(float(axis @ want)) == pytest.approx(1.0, abs=1e-9)

    @given(st.integers(0, 2 ** 32 - 1),
           st.floats(min_value=0.01, max_value=3.1))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_rebuilds_the_rotation(self, seed, angle):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v)
        rot = rotation_about_axis(v, angle)
        axis, ang = axis_angle_of(rot)
        np.testing.assert_allclose(rotation_about_axis(axis, ang), rot, atol=1e-9)


class TestIntrinsicsSerialization:
    def test_dict_round_trip(self):
        k = make_intrinsics()
        assert CameraIntrinsics.from_dict(k.to_dict()) == k
