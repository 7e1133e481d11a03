import math

import numpy as np
import pytest

from gazemanip.geometry import Aabb, RigidTransform, rotation_about_axis
from gazemanip.motion import (COLLISION_STEP, LIFT_HEIGHT, PREGRASP_DIST,
                              RETREAT_BACKOFF, ROT_SPEED_DEG, TCP_SPEED, HeldObject,
                              approach_segment, box_at, in_workspace, line_segment,
                              pick_place_segments, retreat_segment, rotation_segment,
                              routed_line, sweep_clearance, transit_segments)

X = np.array([1.0, 0.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])


def top_down_pose(x, y, z):
    """TCP approaching straight down: +Z of the gripper points at -Z base."""
    rot = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return RigidTransform(rot, (x, y, z))


class TestLineSegment:
    def test_endpoints_exact(self):
        seg = line_segment("t", np.eye(3), (0.3, 0.0, 0.1), (0.3, 0.25, 0.1))
        assert np.array_equal(seg.start.translation, [0.3, 0.0, 0.1])
        assert np.array_equal(seg.end.translation, [0.3, 0.25, 0.1])

    def test_sample_spacing_bounded(self):
        seg = line_segment("t", np.eye(3), (0.0, 0.0, 0.0), (0.0, 0.0, 0.137))
        pts = np.stack([p.translation for p in seg.poses])
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert gaps.max() <= COLLISION_STEP + 1e-12

    def test_sim_time_is_distance_over_speed(self):
        seg = line_segment("t", np.eye(3), (0.0, 0.0, 0.0), (0.3, 0.0, 0.0))
        assert seg.sim_time_s == pytest.approx(0.3 / TCP_SPEED)

    def test_zero_length_degenerates_to_two_samples(self):
        seg = line_segment("t", np.eye(3), (0.1, 0.2, 0.3), (0.1, 0.2, 0.3))
        assert len(seg.poses) == 2
        assert seg.sim_time_s == 0.0

    def test_orientation_constant(self):
        rot = rotation_about_axis(X, 0.7)
        seg = line_segment("t", rot, (0.0, 0.0, 0.0), (0.0, 0.3, 0.0))
        for p in seg.poses:
            np.testing.assert_array_equal(p.rotation, rot)


class TestRotationSegment:
    def test_endpoint_angle_exact(self):
        pose = top_down_pose(0.4, 0.0, 0.3)
        seg = rotation_segment("tilt", pose, X, 120.0)
        want = rotation_about_axis(X, math.radians(120.0)) @ pose.rotation
        np.testing.assert_allclose(seg.end.rotation, want, atol=1e-12)

    def test_translation_never_moves(self):
        pose = top_down_pose(0.4, -0.1, 0.3)
        seg = rotation_segment("tilt", pose, X, -120.0)
        for p in seg.poses:
            np.testing.assert_array_equal(p.translation, pose.translation)

    def test_sim_time_is_angle_over_rate(self):
        seg = rotation_segment("tilt", top_down_pose(0.4, 0.0, 0.3), X, 120.0)
        assert seg.sim_time_s == pytest.approx(120.0 / ROT_SPEED_DEG)

    def test_negative_angle_same_duration(self):
        a = rotation_segment("t", top_down_pose(0.4, 0, 0.3), X, 90.0)
        b = rotation_segment("t", top_down_pose(0.4, 0, 0.3), X, -90.0)
        assert a.sim_time_s == b.sim_time_s


class TestApproachRetreat:
    def test_approach_starts_back_along_approach_axis(self):
        pose = top_down_pose(0.5, 0.1, 0.05)
        seg = approach_segment(pose)
        # approach axis is -Z base here, so pregrasp sits above the grasp
        np.testing.assert_allclose(
            seg.start.translation, [0.5, 0.1, 0.05 + PREGRASP_DIST], atol=1e-12)
        np.testing.assert_allclose(seg.end.translation, pose.translation, atol=1e-12)

    def test_retreat_backs_off_then_rises(self):
        pose = top_down_pose(0.5, 0.1, 0.05)
        seg = retreat_segment(pose)
        np.testing.assert_allclose(
            seg.end.translation,
            [0.5, 0.1, 0.05 + RETREAT_BACKOFF + LIFT_HEIGHT], atol=1e-12)

    def test_side_retreat_stays_clear_of_far_wall(self):
        # side place: approach +y; the old full-length reverse would land
        # the palm 0.10 back, this one only RETREAT_BACKOFF
        rot = np.array([[1.0, 0.0, 0.0],
                        [0.0, 0.0, 1.0],
                        [0.0, -1.0, 0.0]])
        pose = RigidTransform(rot, np.array([0.3, 0.25, 0.06]))
        seg = retreat_segment(pose)
        ys = [float(p.translation[1]) for p in seg.poses]
        assert min(ys) == pytest.approx(0.25 - RETREAT_BACKOFF)
        np.testing.assert_allclose(
            seg.end.translation,
            [0.3, 0.25 - RETREAT_BACKOFF, 0.06 + LIFT_HEIGHT], atol=1e-12)


class TestRoutedLine:
    def test_routes_over_higher_endpoint(self):
        rot = np.eye(3)
        seg = routed_line("travel", rot, (0.2, 0.0, 0.45), (0.6, 0.2, 0.05))
        zs = [float(p.translation[2]) for p in seg.poses]
        assert max(zs) == pytest.approx(0.45)
        # cruise happens at the start height, then a pure vertical sink
        sink = [p for p in seg.poses if abs(p.translation[2] - 0.45) > 1e-9]
        for p in sink:
            np.testing.assert_allclose(p.translation[:2], [0.6, 0.2], atol=1e-12)

    def test_low_to_high_rises_first(self):
        seg = routed_line("travel", np.eye(3), (0.5, 0.1, 0.05), (0.3, -0.2, 0.4))
        first_off_start = next(p for p in seg.poses
                               if np.linalg.norm(p.translation - [0.5, 0.1, 0.05]) > 1e-9)
        np.testing.assert_allclose(first_off_start.translation[:2], [0.5, 0.1],
                                   atol=1e-12)

    def test_explicit_via_height_wins_when_higher(self):
        seg = routed_line("travel", np.eye(3), (0.5, 0.1, 0.05), (0.6, 0.1, 0.05),
                          via_z=0.3)
        assert max(float(p.translation[2]) for p in seg.poses) == pytest.approx(0.3)

    def test_degenerate_move_is_a_single_pose_pair(self):
        seg = routed_line("travel", np.eye(3), (0.5, 0.1, 0.05), (0.5, 0.1, 0.05))
        assert seg.sim_time_s == 0.0


class TestTransit:
    def test_lift_transport_descend_geometry(self):
        pose = top_down_pose(0.4, -0.2, 0.05)
        legs = transit_segments(pose, (0.6, 0.2, 0.12))
        assert [s.label for s in legs] == ["lift", "transport", "descend"]
        lift, transport, descend = legs
        assert lift.end.translation[2] == pytest.approx(0.05 + LIFT_HEIGHT)
        zs = {round(float(p.translation[2]), 9) for p in transport.poses}
        assert zs == {round(0.05 + LIFT_HEIGHT, 9)}
        np.testing.assert_allclose(descend.end.translation, [0.6, 0.2, 0.12], atol=1e-12)

    def test_orientation_locked_throughout(self):
        pose = top_down_pose(0.4, -0.2, 0.05)
        for seg in pick_place_segments(pose, (0.6, 0.2, 0.12)):
            for p in seg.poses:
                np.testing.assert_array_equal(p.rotation, pose.rotation)

    def test_legs_chain_contiguously(self):
        pose = top_down_pose(0.4, -0.2, 0.05)
        legs = pick_place_segments(pose, (0.6, 0.2, 0.12))
        for a, b in zip(legs, legs[1:]):
            np.testing.assert_allclose(a.end.translation, b.start.translation,
                                       atol=1e-12)


class TestWorkspace:
    def test_inside(self):
        assert in_workspace((0.5, 0.0, 0.2))

    def test_too_close(self):
        assert not in_workspace((0.05, 0.05, 0.05))

    def test_too_far(self):
        assert not in_workspace((0.9, 0.3, 0.3))

    def test_boundary_inclusive(self):
        assert in_workspace((0.2, 0.0, 0.0))
        assert in_workspace((0.9, 0.0, 0.0))


class TestBoxAt:
    def test_axis_aligned(self):
        pose = RigidTransform(np.eye(3), (1.0, 2.0, 3.0))
        box = box_at(pose, (-0.1, -0.2, -0.3), (0.1, 0.2, 0.3))
        np.testing.assert_allclose(box.min, [0.9, 1.8, 2.7])
        np.testing.assert_allclose(box.max, [1.1, 2.2, 3.3])

    def test_rotated_cube_diagonal(self):
        # cube of half extent h rotated 45 deg about z spans h*sqrt(2) in x and y
        h = 0.05
        pose = RigidTransform(rotation_about_axis(Z, math.pi / 4), (0, 0, 0))
        box = box_at(pose, (-h, -h, -h), (h, h, h))
        assert box.max[0] == pytest.approx(h * math.sqrt(2))
        assert box.max[1] == pytest.approx(h * math.sqrt(2))
        assert box.max[2] == pytest.approx(h)


class TestHeldObject:
    def test_rigid_attachment(self):
        t_rel = RigidTransform(np.eye(3), (0.0, 0.0, 0.03))
        held = HeldObject(t_rel, np.array([0.01, 0.01, 0.05]))
        tcp = top_down_pose(0.5, 0.0, 0.2)
        obj = held.pose_at(tcp)
        # +Z of the TCP points down, so the object sits 3 cm below the TCP
        np.testing.assert_allclose(obj.translation, [0.5, 0.0, 0.17], atol=1e-12)

    def test_world_aabb_follows_tcp(self):
        held = HeldObject(RigidTransform.identity(), np.array([0.01, 0.02, 0.03]))
        box = held.world_aabb(RigidTransform(np.eye(3), (0.4, 0.1, 0.3)))
        np.testing.assert_allclose(box.center, [0.4, 0.1, 0.3])
        np.testing.assert_allclose(box.extents, [0.02, 0.04, 0.06])


class TestSweepClearance:
    def test_no_obstacles_infinite(self):
        seg = line_segment("t", np.eye(3), (0.3, 0, 0.3), (0.5, 0, 0.3))
        clearance, hit = sweep_clearance([seg], 0.06, [])
        assert clearance == math.inf and hit is None

    def test_clearance_matches_hand_geometry(self):
        # straight pass at constant height over a box 10 cm below the gripper
        # body; gripper body spans z in [-0.12, 0.005] around the TCP
        seg = line_segment("t", np.eye(3), (0.3, 0.0, 0.40), (0.7, 0.0, 0.40))
        obstacle = Aabb((0.45, -0.05, 0.0), (0.55, 0.05, 0.20))
        clearance, hit = sweep_clearance([seg], 0.06, [obstacle])
        assert hit is None
        assert clearance == pytest.approx(0.40 - 0.12 - 0.20, abs=1e-9)

    def test_collision_reports_first_hit(self):
        seg = line_segment("path", np.eye(3), (0.3, 0.0, 0.25), (0.7, 0.0, 0.25))
        wall = Aabb((0.50, -0.2, 0.0), (0.52, 0.2, 0.30))
        clearance, hit = sweep_clearance([seg], 0.06, [Aabb((2, 2, 2), (3, 3, 3)), wall])
        assert clearance == 0.0
        label, obstacle_idx, sample_idx = hit
        assert label == "path" and obstacle_idx == 1 and sample_idx > 0

    def test_payload_collides_when_gripper_clears(self):
        # held object hangs 15 cm under the TCP and is the only thing that hits
        seg = line_segment("t", np.eye(3), (0.3, 0.0, 0.45), (0.7, 0.0, 0.45))
        low_block = Aabb((0.45, -0.05, 0.0), (0.55, 0.05, 0.32))
        assert sweep_clearance([seg], 0.06, [low_block])[1] is None
        held = HeldObject(RigidTransform(np.eye(3), (0.0, 0.0, -0.15)),
                          np.array([0.02, 0.02, 0.02]))
        clearance, hit = sweep_clearance([seg], 0.06, [low_block], held=held)
        assert clearance == 0.0 and hit is not None

    def test_touching_counts_as_hit(self):
        # closed AABBs: exact face contact intersects (bottom lands on z = 0)
        pose_z = 0.12  # gripper body spans [-0.12, 0.005] about the TCP
        seg = line_segment("t", np.eye(3), (0.5, 0.0, pose_z), (0.5, 0.01, pose_z))
        floor = Aabb((0.0, -1.0, -0.1), (1.0, 1.0, 0.0))
        clearance, hit = sweep_clearance([seg], 0.06, [floor])
        assert clearance == 0.0 and hit is not None
