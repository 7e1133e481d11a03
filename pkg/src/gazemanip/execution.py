"""Kinematic plan execution with swept collision checks and goal predicates.

The executor owns a clone of the scenario and mutates it as skills run: held
objects ride the TCP rigidly, containers toggle their opening slab, releases
drop objects exactly at their commanded centroid. There is no dynamics; a
skill succeeds when its path is collision-free inside the workspace shell
and its goal predicate holds on the resulting world state.

Paths come from the same motion helpers the grasp selector sweeps, so a
candidate the selector cleared drives through the identical sample set here.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ExecutionFailure, PlanningError, ReachabilityError
from .geometry import RigidTransform, axis_angle_of
from .grasp import GRIPPER_MAX_WIDTH, gripper_collision_aabb
from .motion import (
    POUR_HOLD_S,
    PREGRASP_DIST,
    HeldObject,
    approach_segment,
    in_workspace,
    routed_line,
    retreat_segment,
    rotation_segment,
    transit_segments,
)
from .planning import HANDOVER_POINT, Plan, check_preconditions, pour_waypoint
from .scene import Scenario

# Straight-down TCP over the table center; radius 0.495 m, inside the shell.
HOME_POSE = RigidTransform(
    np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    np.array([0.35, 0.0, 0.35]),
)

PLACE_XY_TOL = 0.02       # m, centroid offset from the commanded cell
PLACE_REST_TOL = 0.01     # m, object bottom vs support top
POUR_XY_TOL = 0.03        # m, TCP over the target centroid while tilted
HANDOVER_TOL = 0.02       # m, held centroid vs the handover point
PRESS_DEPTH = 0.02        # m of travel into the pressed face
HOVER_CLEARANCE = 0.08    # m above an object for open/close/press staging

MODES = ("gamma", "panel")
POLICIES = ("abort_on_collision", "report")


@dataclass
class RobotState:
    """TCP pose plus gripper payload; the only robot state the model needs.

    The run_* fields are panel-mode bookkeeping: dwelling on one velocity
    button integrates from the pose where the run began, which keeps
    time-slicing exact. The plan executor leaves them at their defaults.
    """

    tcp_pose: RigidTransform
    gripper_width: float = GRIPPER_MAX_WIDTH
    held: HeldObject | None = None
    held_name: str | None = None
    clamped: bool = False
    run_button: str | None = None
    run_anchor: RigidTransform | None = None
    run_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tcp": {
                "rotation": np.asarray(self.tcp_pose.rotation).tolist(),
                "translation": np.asarray(self.tcp_pose.translation).tolist(),
            },
            "gripper_width": self.gripper_width,
            "held": self.held_name,
            "clamped": self.clamped,
        }


@dataclass(frozen=True)
class TrialRecord:
    """One executed trial, JSON-serializable for records and the gateway."""

    scenario_id: str
    mode: str
    success: bool
    failure_reason: str | None
    wall_time_s: float
    sim_time_s: float
    events: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "mode": self.mode,
            "success": self.success,
            "failure_reason": self.failure_reason,
            "wall_time_s": self.wall_time_s,
            "sim_time_s": self.sim_time_s,
            "events": [dict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            scenario_id=d["scenario_id"],
            mode=d["mode"],
            success=bool(d["success"]),
            failure_reason=d.get("failure_reason"),
            wall_time_s=float(d["wall_time_s"]),
            sim_time_s=float(d["sim_time_s"]),
            events=tuple(d.get("events", [])),
        )


class _Aborted(Exception):
    pass


@dataclass
class _SkillOutcome:
    goal_ok: bool = True
    note: str | None = None


class Executor:
    """Drives one plan over a private world clone, emitting ordered events.

    `on_event` is called with each event dict as it is appended; event ids
    are strictly increasing from 1. `request_abort` may be called from any
    thread and takes effect at the next segment boundary.
    """

    def __init__(self, scenario: Scenario, policy: str = "abort_on_collision",
                 on_event=None):
        if policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
        self.world = scenario.clone()
        self.policy = policy
        self.state = RobotState(HOME_POSE)
        self.sim_time_s = 0.0
        self.events: list = []
        self.collisions: list = []
        self._on_event = on_event
        self._abort = threading.Event()
        self._next_event_id = 1
        self._skill_index = -1
        self._goal_failures: list = []

    def request_abort(self) -> None:
        self._abort.set()

    # -- event stream ------------------------------------------------------

    def _emit(self, kind: str, **detail) -> dict:
        event = {"id": self._next_event_id, "t_s": round(self.sim_time_s, 6),
                 "kind": kind}
        event.update(detail)
        self._next_event_id += 1
        self.events.append(event)
        if self._on_event is not None:
            self._on_event(event)
        return event

    # -- swept motion ------------------------------------------------------

    def _obstacles(self, exclude=()):
        """Collision boxes of every world object except `exclude` and the payload."""
        boxes, names = [], []
        for obj in self.world.objects:
            if obj.name in exclude or obj.name == self.state.held_name:
                continue
            for box in obj.collision_aabbs():
                boxes.append(box)
                names.append(obj.name)
        return boxes, names

    def _drive(self, segment, exclude=()) -> None:
        """Advance the TCP along one segment, checking every sample.

        Raises ReachabilityError when a sample leaves the workspace shell and
        ExecutionFailure on contact under the abort policy; the report policy
        records the first contact of the segment and keeps going.
        """
        if self._abort.is_set():
            raise _Aborted()
        boxes, names = self._obstacles(exclude)
        held = self.state.held
        reported = False
        for si, pose in enumerate(segment.poses):
            if not in_workspace(pose.translation):
                raise ReachabilityError(
                    f"{segment.label}: TCP at {np.round(pose.translation, 3)} "
                    f"leaves the workspace shell")
            if held is not None:
                self.world.object(self.state.held_name).pose = held.pose_at(pose)
            if reported:
                continue
            swept = [("gripper", gripper_collision_aabb(pose, self.state.gripper_width))]
            if held is not None:
                swept.append((self.state.held_name, held.world_aabb(pose)))
            hit = None
            for body, box in swept:
                for bi, ob in enumerate(boxes):
                    if box.intersects(ob):
                        hit = (body, names[bi])
                        break
                if hit:
                    break
            if hit:
                self._emit("collision", skill=self._skill_index,
                           segment=segment.label, sample=si, pair=list(hit))
                self.collisions.append(
                    {"skill": self._skill_index, "segment": segment.label,
                     "sample": si, "pair": hit})
                if self.policy == "abort_on_collision":
                    raise ExecutionFailure(
                        f"{segment.label}: {hit[0]} hit {hit[1]} at sample {si}",
                        colliding_pair=hit, step_index=si)
                reported = True  # one report per segment is enough
        self.state.tcp_pose = segment.end
        self.sim_time_s += segment.sim_time_s
        self._emit("motion", segment=segment.label,
                   duration_s=round(segment.sim_time_s, 6),
                   tcp=[round(v, 6) for v in segment.end.translation],
                   path=[[round(v, 6) for v in p] for p in segment.polyline()])

    def _reorient(self, target_rotation: np.ndarray) -> None:
        """Rotate the TCP in place onto `target_rotation` (shortest geodesic)."""
        cur = self.state.tcp_pose
        axis, angle = axis_angle_of(target_rotation @ cur.rotation.T)
        if axis is None:
            return
        seg = rotation_segment("reorient", cur, axis, np.degrees(angle))
        self._drive(seg)
        # snap to the exact target; the sweep sampled the true path already
        self.state.tcp_pose = RigidTransform(np.array(target_rotation, dtype=float),
                                             cur.translation)

    def _travel(self, label: str, point, exclude=()) -> None:
        # free moves cruise at the higher endpoint; diagonals between low
        # waypoints would sweep through anything standing between them
        seg = routed_line(label, self.state.tcp_pose.rotation,
                          self.state.tcp_pose.translation, point)
        self._drive(seg, exclude=exclude)

    def _goal_tcp_for_centroid(self, centroid) -> np.ndarray:
        """TCP position that puts the held object's centroid at `centroid`."""
        held = self.state.held
        offset = self.state.tcp_pose.rotation @ held.t_rel.translation
        return np.asarray(centroid, dtype=float) - offset

    # -- skills ------------------------------------------------------------

    def _require_held(self, action: str):
        if self.state.held is None:
            raise ExecutionFailure(f"{action}: nothing is held")
        return self.world.object(self.state.held_name)

    def _skill_pick(self, skill) -> _SkillOutcome:
        obj = self.world.object(skill.object_name)
        grasp = skill.grasp
        self._reorient(grasp.pose.rotation)
        # pre-shape to the grasp width so the sweep matches the selector's
        self.state.gripper_width = grasp.width
        self._emit("gripper", width=grasp.width)
        pre = grasp.translation - PREGRASP_DIST * grasp.approach
        self._travel("travel", pre)
        self._drive(approach_segment(grasp.pose), exclude=(obj.name,))
        t_rel = self.state.tcp_pose.inverse() @ obj.pose
        self.state.held = HeldObject(t_rel, obj.local_half_extents())
        self.state.held_name = obj.name
        self._emit("grasped", object=obj.name, width=grasp.width,
                   label=grasp.label)
        return _SkillOutcome()

    def _skill_place(self, skill) -> _SkillOutcome:
        held_obj = self._require_held(skill.action)
        goal_tcp = self._goal_tcp_for_centroid(skill.place_point)
        for seg in transit_segments(self.state.tcp_pose, goal_tcp):
            self._drive(seg)
        placed = self.state.held_name
        self.state.held = None
        self.state.held_name = None
        self._emit("released", object=placed,
                   at=[round(v, 6) for v in held_obj.pose.translation])
        outcome = self._check_place_goal(skill, held_obj)
        # withdraw at the grasp width; opening fully inside a container mouth
        # would clip its walls
        self._drive(retreat_segment(self.state.tcp_pose), exclude=(placed,))
        self.state.gripper_width = GRIPPER_MAX_WIDTH
        return outcome

    def _check_place_goal(self, skill, placed) -> _SkillOutcome:
        centroid = placed.pose.translation
        target = np.asarray(skill.place_point, dtype=float)
        if skill.action == "place_inside":
            dst = self.world.object(skill.object_name)
            if not dst.interior_aabb().contains(centroid):
                return _SkillOutcome(False,
                                     f"{placed.name} centroid is outside {dst.name}")
            return _SkillOutcome()
        if skill.action == "place_on":
            dst = self.world.object(skill.object_name)
            xy_err = float(np.linalg.norm(centroid[:2] - target[:2]))
            bottom = float(placed.aabb().min[2])
            rest_err = abs(bottom - dst.top_height())
            if xy_err > PLACE_XY_TOL:
                return _SkillOutcome(False,
                                     f"{placed.name} is {xy_err:.3f} m off its cell")
            if rest_err > PLACE_REST_TOL:
                return _SkillOutcome(False,
                                     f"{placed.name} is not resting on {dst.name}")
            return _SkillOutcome()
        # place_at: return to an absolute point
        err = float(np.linalg.norm(centroid - target))
        if err > PLACE_XY_TOL:
            return _SkillOutcome(False, f"{placed.name} is {err:.3f} m off its target")
        return _SkillOutcome()

    def _skill_pour(self, skill) -> _SkillOutcome:
        held_obj = self._require_held("pour_over")
        dst = self.world.object(skill.object_name)
        waypoint = pour_waypoint(self.world, dst.name, held_obj)
        goal_tcp = self._goal_tcp_for_centroid(waypoint)
        for seg in transit_segments(self.state.tcp_pose, goal_tcp):
            self._drive(seg)
        angle = float(skill.pour_angle_deg)
        axis = self.state.tcp_pose.rotation[:, 0]  # closing axis, base frame
        self._drive(rotation_segment("tilt", self.state.tcp_pose, axis, angle))
        self.sim_time_s += POUR_HOLD_S
        self._emit("pour_hold", seconds=POUR_HOLD_S, tilt_deg=angle,
                   over=dst.name)
        tcp_xy = self.state.tcp_pose.translation[:2]
        xy_err = float(np.linalg.norm(tcp_xy - dst.pose.translation[:2]))
        outcome = _SkillOutcome()
        if xy_err > POUR_XY_TOL:
            outcome = _SkillOutcome(False,
                                    f"pour TCP is {xy_err:.3f} m off {dst.name}")
        elif angle < 120.0 - 1e-9:
            outcome = _SkillOutcome(False, f"tilt {angle:.1f} deg is too shallow")
        self._drive(rotation_segment("untilt", self.state.tcp_pose, axis, -angle))
        return outcome

    def _skill_toggle(self, skill) -> _SkillOutcome:
        obj = self.world.object(skill.object_name)
        hover = np.array(obj.aabb().center)
        hover[2] = obj.aabb().max[2] + HOVER_CLEARANCE
        self._travel("stage", hover, exclude=(obj.name,))
        obj.open = skill.action == "open"
        self._emit(skill.action + "ed", object=obj.name)
        return _SkillOutcome()

    def _skill_press(self, skill) -> _SkillOutcome:
        obj = self.world.object(skill.object_name)
        top = obj.aabb().max[2]
        hover = np.array(obj.aabb().center)
        hover[2] = top + HOVER_CLEARANCE
        self._travel("stage", hover, exclude=(obj.name,))
        down = np.array([hover[0], hover[1], top - PRESS_DEPTH])
        self._travel("press", down, exclude=(obj.name,))
        self._emit("pressed", object=obj.name)
        self._travel("release_press", hover, exclude=(obj.name,))
        return _SkillOutcome()

    def _skill_hand_over(self, skill) -> _SkillOutcome:
        held_obj = self._require_held("hand_over")
        goal_tcp = self._goal_tcp_for_centroid(HANDOVER_POINT)
        for seg in transit_segments(self.state.tcp_pose, goal_tcp):
            self._drive(seg)
        err = float(np.linalg.norm(held_obj.pose.translation - HANDOVER_POINT))
        handed = self.state.held_name
        # the receiver takes the object; it leaves the collision world here
        self.state.held = None
        self.state.held_name = None
        self.state.gripper_width = GRIPPER_MAX_WIDTH
        self._emit("handed_over", object=handed,
                   at=[round(v, 6) for v in held_obj.pose.translation])
        if err > HANDOVER_TOL:
            return _SkillOutcome(False, f"{handed} is {err:.3f} m off the handover point")
        return _SkillOutcome()

    _DISPATCH = {
        "pick": _skill_pick,
        "place_on": _skill_place,
        "place_inside": _skill_place,
        "place_at": _skill_place,
        "pour_over": _skill_pour,
        "open": _skill_toggle,
        "close": _skill_toggle,
        "press": _skill_press,
        "hand_over": _skill_hand_over,
    }

    # -- plan loop ---------------------------------------------------------

    def run_plan(self, plan: Plan, scenario_id: str | None = None,
                 mode: str = "gamma") -> TrialRecord:
        """Execute every skill in order and return the trial record.

        Collisions, goal-predicate misses, reachability violations, aborts,
        and stale preconditions all land in `failure_reason`; the event
        timeline keeps the per-sample detail.
        """
        t0 = time.perf_counter()
        scenario_id = scenario_id if scenario_id is not None else self.world.name
        failure = None
        try:
            check_preconditions(plan, self.world)
            self._emit("plan_started", skills=[s.describe() for s in plan.skills])
            for i, skill in enumerate(plan.skills):
                self._skill_index = i
                if self._abort.is_set():
                    raise _Aborted()
                self._emit("skill_started", index=i, action=skill.action,
                           object=skill.object_name)
                outcome = self._DISPATCH[skill.action](self, skill)
                if not outcome.goal_ok:
                    self._goal_failures.append(f"{skill.describe()}: {outcome.note}")
                    self._emit("goal_failed", index=i, reason=outcome.note)
                else:
                    self._emit("skill_done", index=i)
        except _Aborted:
            failure = "aborted"
            self._emit("aborted", skill=self._skill_index)
        except ExecutionFailure as e:
            failure = str(e)
        except ReachabilityError as e:
            failure = str(e)
            self._emit("unreachable", skill=self._skill_index, reason=str(e))
        except PlanningError as e:
            failure = f"precondition: {e}"
            self._emit("precondition_failed", reason=str(e))
        if failure is None:
            if self.collisions:
                c = self.collisions[0]
                failure = (f"{c['segment']}: {c['pair'][0]} hit {c['pair'][1]} "
                           f"at sample {c['sample']}")
            elif self._goal_failures:
                failure = self._goal_failures[0]
        success = failure is None
        self._emit("plan_done", success=success)
        return TrialRecord(
            scenario_id=scenario_id,
            mode=mode,
            success=success,
            failure_reason=failure,
            wall_time_s=time.perf_counter() - t0,
            sim_time_s=self.sim_time_s,
            events=tuple(self.events),
        )


def execute_plan(plan: Plan, scenario: Scenario,
                 policy: str = "abort_on_collision",
                 scenario_id: str | None = None,
                 on_event=None) -> TrialRecord:
    """Run `plan` against a clone of `scenario` and return the TrialRecord."""
    return Executor(scenario, policy=policy, on_event=on_event).run_plan(
        plan, scenario_id=scenario_id)
