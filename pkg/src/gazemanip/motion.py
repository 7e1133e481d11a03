"""TCP motion paths and swept gripper volumes.

Paths are straight-line TCP interpolations sampled at a fixed spatial step,
plus fixed-axis rotations sampled at a fixed angular step. Grasp screening
and plan execution both build their sweeps from these helpers, so what the
selector clears is exactly what the executor later drives through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Aabb, RigidTransform, rotation_about_axis
from .grasp import gripper_collision_aabb

TCP_SPEED = 0.060            # m/s linear
ROT_SPEED_DEG = 15.0         # deg/s about a fixed axis
LIFT_HEIGHT = 0.20           # m straight up after grasp
PREGRASP_DIST = 0.10         # m back along the approach axis
RETREAT_BACKOFF = 0.04       # m reverse of approach after release, pre-rise
COLLISION_STEP = 0.01        # m between swept samples
ROTATION_STEP_DEG = 2.0      # deg between swept samples while rotating
WORKSPACE_SHELL = (0.2, 0.9)  # reachable TCP radius band around the base
POUR_ANGLE_DEG = 120.0
POUR_HOLD_S = 1.0


def in_workspace(point: np.ndarray) -> bool:
    r = float(np.linalg.norm(np.asarray(point, dtype=float)))
    return WORKSPACE_SHELL[0] <= r <= WORKSPACE_SHELL[1]


def box_at(pose: RigidTransform, lo, hi) -> Aabb:
    """World-frame AABB of a posed local box (conservative under rotation)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    world = pose.apply(corners)
    return Aabb(world.min(axis=0), world.max(axis=0))


@dataclass(frozen=True)
class HeldObject:
    """A grasped object: pose rigidly attached to the TCP frame."""

    t_rel: RigidTransform          # TCP -> object local
    half_extents: np.ndarray       # local box half-extents

    def pose_at(self, tcp_pose: RigidTransform) -> RigidTransform:
        return tcp_pose @ self.t_rel

    def world_aabb(self, tcp_pose: RigidTransform) -> Aabb:
        he = np.asarray(self.half_extents, dtype=float)
        return box_at(self.pose_at(tcp_pose), -he, he)


@dataclass(frozen=True)
class PathSegment:
    label: str
    poses: tuple                   # sampled RigidTransforms, endpoints included
    sim_time_s: float
    knees: tuple | None = None     # TCP polyline vertices when not a single line

    @property
    def start(self) -> RigidTransform:
        return self.poses[0]

    @property
    def end(self) -> RigidTransform:
        return self.poses[-1]

    def polyline(self) -> tuple:
        """TCP path vertices; straight segments are just their endpoints."""
        if self.knees is not None:
            return self.knees
        return (tuple(float(v) for v in self.start.translation),
                tuple(float(v) for v in self.end.translation))


def line_segment(label: str, rotation: np.ndarray, p0, p1,
                 step: float = COLLISION_STEP) -> PathSegment:
    """Straight TCP line with fixed orientation; samples at most `step` apart."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(np.linalg.norm(p1 - p0))
    n = max(1, int(math.ceil(d / step - 1e-12)))
    ts = np.linspace(0.0, 1.0, n + 1)
    poses = tuple(RigidTransform(rotation, p0 + t * (p1 - p0)) for t in ts)
    return PathSegment(label, poses, d / TCP_SPEED)


def rotation_segment(label: str, pose: RigidTransform, axis, angle_deg: float,
                     step_deg: float = ROTATION_STEP_DEG) -> PathSegment:
    """Rotate the TCP about a base-frame axis through its own origin."""
    axis = np.asarray(axis, dtype=float)
    n = max(1, int(math.ceil(abs(angle_deg) / step_deg - 1e-12)))
    fracs = np.linspace(0.0, 1.0, n + 1)
    poses = tuple(
        RigidTransform(rotation_about_axis(axis, math.radians(f * angle_deg)) @ pose.rotation,
                       pose.translation)
        for f in fracs)
    return PathSegment(label, poses, abs(angle_deg) / ROT_SPEED_DEG)


def approach_segment(grasp_pose: RigidTransform,
                     pre_dist: float = PREGRASP_DIST) -> PathSegment:
    """Pre-grasp to grasp, straight in along the approach axis."""
    a = grasp_pose.rotation[:, 2]
    g = grasp_pose.translation
    return line_segment("approach", grasp_pose.rotation, g - pre_dist * a, g)


def _chain(label: str, pieces) -> PathSegment:
    """Join line pieces into one segment, dropping duplicate junction poses."""
    poses = list(pieces[0].poses)
    knees = list(pieces[0].polyline())
    total = pieces[0].sim_time_s
    for seg in pieces[1:]:
        poses.extend(seg.poses[1:])
        knees.extend(seg.polyline()[1:])
        total += seg.sim_time_s
    return PathSegment(label, tuple(poses), total, knees=tuple(knees))


def routed_line(label: str, rotation: np.ndarray, p0, p1,
                via_z: float | None = None) -> PathSegment:
    """Rise, cruise level, then sink; one segment, fixed orientation.

    Free-space moves route over `via_z` (default: the higher endpoint) so
    the straight line never drags the gripper through whatever stands
    between two low waypoints.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    z = max(p0[2], p1[2]) if via_z is None else max(via_z, p0[2], p1[2])
    knees = [p0, np.array([p0[0], p0[1], z]), np.array([p1[0], p1[1], z]), p1]
    pieces = [line_segment(label, rotation, a, b)
              for a, b in zip(knees[:-1], knees[1:])
              if float(np.linalg.norm(b - a)) > 1e-12]
    if not pieces:
        return line_segment(label, rotation, p0, p1)
    return _chain(label, pieces)


def retreat_segment(pose: RigidTransform,
                    backoff: float = RETREAT_BACKOFF,
                    rise: float = LIFT_HEIGHT) -> PathSegment:
    """Short reverse of the approach, then straight up.

    The backoff detaches the pads from the released object; the rise pulls
    the body out of container mouths before any lateral move. Reversing the
    whole approach instead would drag the palm into the far wall of a
    close-fitting cell.
    """
    a = pose.rotation[:, 2]
    p = pose.translation
    back = p - backoff * a
    up = back + np.array([0.0, 0.0, rise])
    return _chain("retreat", [line_segment("retreat", pose.rotation, p, back),
                              line_segment("retreat", pose.rotation, back, up)])


def transit_segments(grasp_pose: RigidTransform, goal_xyz,
                     lift: float = LIFT_HEIGHT) -> list:
    """lift -> transport-at-height -> descend, orientation locked.

    The transport runs at the lifted pick height; the descend drops to the
    goal point. Returns [] legs in execution order.
    """
    rot = grasp_pose.rotation
    g = grasp_pose.translation
    goal = np.asarray(goal_xyz, dtype=float)
    top = np.array([g[0], g[1], g[2] + lift])
    over = np.array([goal[0], goal[1], g[2] + lift])
    return [
        line_segment("lift", rot, g, top),
        line_segment("transport", rot, top, over),
        line_segment("descend", rot, over, goal),
    ]


def pick_place_segments(grasp_pose: RigidTransform, place_xyz,
                        lift: float = LIFT_HEIGHT,
                        pre_dist: float = PREGRASP_DIST) -> list:
    """approach -> lift -> transport -> descend for one pick-and-place."""
    return [approach_segment(grasp_pose, pre_dist)] + transit_segments(
        grasp_pose, place_xyz, lift)


def sweep_clearance(segments, width: float, obstacles,
                    held: HeldObject | None = None):
    """Min gap between the swept gripper (and payload) and obstacle boxes.

    Grasped-object volume is only swept on legs after the fingers close, so
    pass `held` per leg batch. Returns (clearance_m, hit) where hit is
    (segment label, obstacle index, sample index) for the first overlap, or
    None when the sweep is collision-free. With no obstacles the clearance
    is +inf.
    """
    clearance = math.inf
    hit = None
    for seg in segments:
        for si, pose in enumerate(seg.poses):
            boxes = [gripper_collision_aabb(pose, width)]
            if held is not None:
                boxes.append(held.world_aabb(pose))
            for oi, obs in enumerate(obstacles):
                for b in boxes:
                    if b.intersects(obs):
                        if hit is None:
                            hit = (seg.label, oi, si)
                        clearance = 0.0
                    else:
                        clearance = min(clearance, b.distance_to(obs))
            if hit is not None:
                # first overlap already pins the verdict; keep scanning cheaply
                return 0.0, hit
    return clearance, None
