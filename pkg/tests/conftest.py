import numpy as np
import pytest

from gazemanip.geometry import CameraIntrinsics, RigidTransform
from gazemanip.scene import Camera, SceneObject, Scenario, camera_look_at


def make_intrinsics(fx=280.0, fy=280.0, cx=None, cy=None, width=320, height=240):
    cx = width / 2.0 if cx is None else cx
    cy = height / 2.0 if cy is None else cy
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)


def random_rotation(rng):
    """Uniform-ish random rotation from a random axis and angle."""
    axis = rng.normal(size=3)
    axis = axis / np.linalg.norm(axis)
    angle = rng.uniform(-np.pi, np.pi)
    from gazemanip.geometry import rotation_about_axis

    return rotation_about_axis(axis, angle)


def two_camera_rig():
    k = make_intrinsics()
    cam0 = Camera("cam0", k, camera_look_at((0.9, -0.55, 0.55), (0.45, 0.0, 0.05)))
    cam1 = Camera("cam1", k, camera_look_at((0.15, 0.6, 0.5), (0.45, 0.0, 0.05)))
    return [cam0, cam1]


@pytest.fixture
def smoke_scenario():
    """Red box and a green can on the table, two diagonal cameras."""
    box = SceneObject("crate", "box", (0.05, 0.07, 0.08),
                      RigidTransform(np.eye(3), np.array([0.5, 0.0, 0.04])),
                      color=(200, 60, 60), graspable=True)
    can = SceneObject("can", "cylinder", (0.03, 0.12),
                      RigidTransform(np.eye(3), np.array([0.55, 0.18, 0.06])),
                      color=(60, 200, 60), graspable=True, pourable=True)
    return Scenario("smoke", [box, can], two_camera_rig())
