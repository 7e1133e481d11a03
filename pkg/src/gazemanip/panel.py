"""Gaze-panel baseline: velocity buttons driven by dwell on screen regions.

The operator steers the TCP by holding gaze on one of 14 buttons: signed
translations along the base axes at 60 mm/s, signed rotations about base
axes through the TCP at 15 deg/s, and two gripper actions. Motion runs only
while gaze stays on the button and stops the moment it leaves.

Dwell on one button integrates from the pose where the run began, so
splitting an interval into two steps lands bit-exactly on the same pose as
taking it whole.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .execution import HOME_POSE, RobotState, TrialRecord
from .geometry import RigidTransform, rotation_about_axis
from .grasp import (
    CONTACT_EPS,
    FINGER_PAD_HALF_Y,
    FINGER_SPAN,
    GRIPPER_MAX_WIDTH,
)
from .motion import ROT_SPEED_DEG, TCP_SPEED, WORKSPACE_SHELL, HeldObject, box_at
from .scene import Scenario

BUTTONS = (
    "+x", "-x", "+y", "-y", "+z", "-z", "open_gripper",
    "+roll", "-roll", "+pitch", "-pitch", "+yaw", "-yaw", "close_gripper",
)
GRIPPER_BUTTONS = ("open_gripper", "close_gripper")

BUTTON_SIZE_PX = 120
CLOSE_SWEEP_STEP = 0.001     # m of width per closing increment
PAD_HALF_THICKNESS = 0.002   # m, finger pad depth along the closing axis

_AXES = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
    "roll": np.array([1.0, 0.0, 0.0]),
    "pitch": np.array([0.0, 1.0, 0.0]),
    "yaw": np.array([0.0, 0.0, 1.0]),
}


@dataclass(frozen=True)
class PanelCommand:
    button: str
    held: bool

    def __post_init__(self):
        if self.button not in BUTTONS:
            raise ValueError(f"unknown panel button {self.button!r}")


@dataclass(frozen=True)
class PanelLayout:
    """Screen regions for the 2x7 button grid; coordinates come from config."""

    origin: tuple = (20, 20)
    button_px: int = BUTTON_SIZE_PX
    gap_px: int = 10
    columns: int = 7
    buttons: tuple = BUTTONS

    def __post_init__(self):
        if len(self.buttons) % self.columns != 0:
            raise ValueError("button count must fill the grid exactly")

    def region(self, button: str) -> tuple:
        """(u0, v0, u1, v1) pixel rectangle of one button, edges exclusive."""
        i = self.buttons.index(button)
        row, col = divmod(i, self.columns)
        pitch = self.button_px + self.gap_px
        u0 = self.origin[0] + col * pitch
        v0 = self.origin[1] + row * pitch
        return (u0, v0, u0 + self.button_px, v0 + self.button_px)

    def button_at(self, u: float, v: float) -> str | None:
        pitch = self.button_px + self.gap_px
        col, du = divmod(u - self.origin[0], pitch)
        row, dv = divmod(v - self.origin[1], pitch)
        if not (0 <= du < self.button_px and 0 <= dv < self.button_px):
            return None
        col, row = int(col), int(row)
        rows = len(self.buttons) // self.columns
        if not (0 <= col < self.columns and 0 <= row < rows):
            return None
        return self.buttons[row * self.columns + col]

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "button_px": self.button_px,
            "gap_px": self.gap_px,
            "columns": self.columns,
            "buttons": list(self.buttons),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PanelLayout":
        return cls(
            origin=tuple(d.get("origin", (20, 20))),
            button_px=int(d.get("button_px", BUTTON_SIZE_PX)),
            gap_px=int(d.get("gap_px", 10)),
            columns=int(d.get("columns", 7)),
            buttons=tuple(d.get("buttons", BUTTONS)),
        )


def _integrate(anchor: RigidTransform, button: str, seconds: float) -> RigidTransform:
    sign = 1.0 if button[0] == "+" else -1.0
    axis = _AXES[button[1:]]
    if button[1:] in ("x", "y", "z"):
        return RigidTransform(anchor.rotation,
                              anchor.translation + axis * (sign * TCP_SPEED * seconds))
    angle = math.radians(sign * ROT_SPEED_DEG * seconds)
    return RigidTransform(rotation_about_axis(axis, angle) @ anchor.rotation,
                          anchor.translation)


def _clamp_to_shell(pose: RigidTransform):
    """Radially clamp the TCP into the workspace shell; True when clamped."""
    r = float(np.linalg.norm(pose.translation))
    lo, hi = WORKSPACE_SHELL
    if r > hi:
        return RigidTransform(pose.rotation, pose.translation * (hi / r)), True
    if 0.0 < r < lo:
        return RigidTransform(pose.rotation, pose.translation * (lo / r)), True
    return pose, False


def panel_step(state: RobotState, cmd: PanelCommand, dt: float) -> RobotState:
    """Advance the robot by one dwell interval; pure, returns a new state.

    Velocity buttons integrate 60 mm/s translations or 15 deg/s rotations
    about a base axis through the TCP while held; gripper buttons act once.
    Leaving the button (held=False) stops motion immediately. Motion exiting
    the workspace shell is clamped at the boundary and flagged.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not cmd.held:
        if state.run_button is None:
            return state
        return replace(state, run_button=None, run_anchor=None, run_s=0.0)
    if cmd.button == "open_gripper":
        return replace(state, gripper_width=GRIPPER_MAX_WIDTH, held=None,
                       held_name=None, run_button=None, run_anchor=None, run_s=0.0)
    if cmd.button == "close_gripper":
        # without a world this just closes; panel_session resolves contact
        return replace(state, gripper_width=0.0,
                       run_button=None, run_anchor=None, run_s=0.0)
    if state.run_button == cmd.button and state.run_anchor is not None:
        anchor = state.run_anchor
        run_s = state.run_s + dt
    else:
        anchor = state.tcp_pose
        run_s = dt
    pose, clamped = _clamp_to_shell(_integrate(anchor, cmd.button, run_s))
    return replace(state, tcp_pose=pose, clamped=clamped,
                   run_button=cmd.button, run_anchor=anchor, run_s=run_s)


def _finger_pad_boxes(tcp_pose: RigidTransform, width: float):
    zlo, zhi = FINGER_SPAN
    half = width / 2.0
    boxes = []
    for side in (-1.0, 1.0):
        lo = (side * half - PAD_HALF_THICKNESS, -FINGER_PAD_HALF_Y, zlo)
        hi = (side * half + PAD_HALF_THICKNESS, FINGER_PAD_HALF_Y, zhi)
        boxes.append(box_at(tcp_pose, lo, hi))
    return boxes


def attempt_close(world: Scenario, state: RobotState,
                  eps: float = CONTACT_EPS,
                  step: float = CLOSE_SWEEP_STEP) -> RobotState:
    """Close the gripper by 1 mm sweeps until both pads contact one object.

    Contact means both finger pad boxes are within `eps` of the same object's
    AABB; that object attaches to the TCP. A sweep that reaches zero width
    grasps nothing.
    """
    width = state.gripper_width
    while width > 0.0:
        pads = _finger_pad_boxes(state.tcp_pose, width)
        best = None
        for obj in world.objects:
            box = obj.aabb()
            gap = max(pad.distance_to(box) for pad in pads)
            if gap <= eps and (best is None or gap < best[0]):
                best = (gap, obj)
        if best is not None:
            obj = best[1]
            t_rel = state.tcp_pose.inverse() @ obj.pose
            return replace(state, gripper_width=width,
                           held=HeldObject(t_rel, obj.local_half_extents()),
                           held_name=obj.name,
                           run_button=None, run_anchor=None, run_s=0.0)
        width = max(0.0, width - step)
    return replace(state, gripper_width=0.0, held=None, held_name=None,
                   run_button=None, run_anchor=None, run_s=0.0)


@dataclass
class _Run:
    button: str | None
    start_s: float
    end_s: float
    tcp_start: np.ndarray
    tcp_end: np.ndarray

    def to_event_fields(self) -> dict:
        return {
            "button": self.button,
            "start_s": round(self.start_s, 6),
            "end_s": round(self.end_s, 6),
            "duration_s": round(self.end_s - self.start_s, 6),
            "tcp_start": [round(v, 6) for v in self.tcp_start],
            "tcp_end": [round(v, 6) for v in self.tcp_end],
        }


def panel_session(scenario: Scenario, samples, layout: PanelLayout | None = None,
                  scenario_id: str | None = None) -> TrialRecord:
    """Replay a screen-gaze stream over the button board against a world clone.

    `samples` is a time-sorted sequence of (t_s, u, v). An interval drives
    its button only when both endpoint samples land on that same button;
    anything else (including off-board gaze) is a no-motion interval. The
    record's events carry one panel_run per dwell run, whose durations sum to
    the session duration, plus gripper and session bookkeeping.
    """
    layout = layout or PanelLayout()
    samples = [(float(t), float(u), float(v)) for t, u, v in samples]
    for a, b in zip(samples, samples[1:]):
        if b[0] <= a[0]:
            raise ValueError("gaze samples must be strictly increasing in time")
    t0 = time.perf_counter()
    world = scenario.clone()
    start = scenario.task.get("panel_tcp")
    tcp = RigidTransform(HOME_POSE.rotation,
                         np.asarray(start, dtype=float) if start is not None
                         else HOME_POSE.translation)
    state = RobotState(tcp)
    events = []
    next_id = 1

    def emit(kind, **detail):
        nonlocal next_id
        e = {"id": next_id, "t_s": round(now, 6), "kind": kind}
        e.update(detail)
        next_id += 1
        events.append(e)

    now = samples[0][0] if samples else 0.0
    emit("session_started", samples=len(samples))

    buttons = [layout.button_at(u, v) for _, u, v in samples]
    run: _Run | None = None
    prev_active = None
    for i in range(len(samples) - 1):
        t_a, t_b = samples[i][0], samples[i + 1][0]
        active = buttons[i] if buttons[i] == buttons[i + 1] else None
        now = t_b
        if run is not None and run.button != active:
            emit("panel_run", **run.to_event_fields())
            run = None
        if run is None:
            run = _Run(active, t_a, t_b, np.array(state.tcp_pose.translation),
                       np.array(state.tcp_pose.translation))
        if active is None:
            state = panel_step(state, PanelCommand("+x", held=False), t_b - t_a)
        elif active == "close_gripper":
            if prev_active != "close_gripper":
                state = attempt_close(world, state)
                if state.held_name:
                    emit("grasped", object=state.held_name,
                         width=round(state.gripper_width, 6))
                else:
                    emit("closed_empty")
        elif active == "open_gripper":
            if prev_active != "open_gripper":
                released = state.held_name
                state = panel_step(state, PanelCommand(active, True), t_b - t_a)
                if released:
                    emit("released", object=released)
        else:
            was_clamped = state.clamped
            state = panel_step(state, PanelCommand(active, True), t_b - t_a)
            if state.held is not None:
                world.object(state.held_name).pose = state.held.pose_at(state.tcp_pose)
            if state.clamped and not was_clamped:
                emit("clamped", button=active)
        run.end_s = t_b
        run.tcp_end = np.array(state.tcp_pose.translation)
        prev_active = active
    if run is not None:
        emit("panel_run", **run.to_event_fields())

    duration = samples[-1][0] - samples[0][0] if len(samples) > 1 else 0.0
    target = scenario.task.get("panel_target")
    if target is None:
        success, reason = True, None
    elif state.held_name == target:
        success, reason = True, None
    else:
        success, reason = False, f"target {target!r} not grasped"
    emit("session_done", success=success)
    return TrialRecord(
        scenario_id=scenario_id if scenario_id is not None else scenario.name,
        mode="panel",
        success=success,
        failure_reason=reason,
        wall_time_s=time.perf_counter() - t0,
        sim_time_s=duration,
        events=tuple(events),
    )
