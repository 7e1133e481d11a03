"""Skill plans: compile a predicted intent into an ordered, precondition-closed
sequence of atomic skills, and derive placement targets from scene semantics.

Plans are static data; execution lives elsewhere. The precondition check is
shared: the compiler runs it on its own output, and the executor re-runs it
before moving, so a hand-edited plan cannot sneak past the rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PlanningError
from .grasp import GraspCandidate
from .motion import POUR_ANGLE_DEG
from .scene import Scenario, SceneObject

PLACE_CLEARANCE = 0.002   # m of air under the object at release
POUR_GAP = 0.02           # m between container rim and the held object's base

ACTION_SET = ("pick_and_place", "pour", "open", "close", "press", "hand_over")

# where a hand_over ends: held out over the table's front-left corner
HANDOVER_POINT = np.array([0.30, -0.40, 0.35])


@dataclass(frozen=True)
class Skill:
    """One atomic s(object, action) step with its motion parameters."""

    action: str               # open | close | pick | place_on | place_inside |
                              # place_at | pour_over | press | hand_over
    object_name: str
    grasp: GraspCandidate | None = None
    place_point: np.ndarray | None = None    # object-centroid target, base frame
    pour_angle_deg: float | None = None

    def __post_init__(self):
        needs_grasp = self.action == "pick"
        if needs_grasp != (self.grasp is not None):
            raise PlanningError(f"skill {self.action!r} grasp parameter mismatch")
        needs_point = self.action in ("place_on", "place_inside", "place_at")
        if needs_point != (self.place_point is not None):
            raise PlanningError(f"skill {self.action!r} place_point parameter mismatch")
        if (self.action == "pour_over") != (self.pour_angle_deg is not None):
            raise PlanningError(f"skill {self.action!r} pour angle parameter mismatch")

    def describe(self) -> str:
        return f"{self.action}({self.object_name})"


@dataclass(frozen=True)
class Plan:
    skills: tuple
    source_intent: object     # IntentPrediction

    def describe(self) -> str:
        return " -> ".join(s.describe() for s in self.skills)


def _object_half_height(obj: SceneObject) -> float:
    box = obj.aabb()
    return float(box.extents[2]) / 2.0


def place_target(scn: Scenario, destination: str, held: SceneObject) -> np.ndarray:
    """Target centroid for setting `held` onto / into `destination`.

    Containers take the interior floor cell, flat surfaces the top face.
    The scenario task dict may pin an explicit cell via "place_xy".
    """
    dst = scn.object(destination)
    half_h = _object_half_height(held)
    if dst.container:
        interior = dst.interior_aabb()
        xy = scn.task.get("place_xy")
        cx, cy = (float(xy[0]), float(xy[1])) if xy else tuple(interior.center[:2])
        return np.array([cx, cy, interior.min[2] + half_h + PLACE_CLEARANCE])
    if dst.flat_surface:
        box = dst.aabb()
        xy = scn.task.get("place_xy")
        cx, cy = (float(xy[0]), float(xy[1])) if xy else tuple(box.center[:2])
        return np.array([cx, cy, box.max[2] + half_h + PLACE_CLEARANCE])
    raise PlanningError(
        f"{destination!r} is neither a container nor a flat surface; cannot place onto it")


def pour_waypoint(scn: Scenario, destination: str, held: SceneObject) -> np.ndarray:
    """Held-object centroid while pouring: centered over the destination,
    clear of its rim at every tilt angle (the held box sweeps a ball of its
    half-diagonal radius while rotating about its centroid)."""
    dst = scn.object(destination)
    top = dst.top_height()
    swing = float(np.linalg.norm(held.aabb().extents)) / 2.0
    return np.array([dst.pose.translation[0], dst.pose.translation[1],
                     top + POUR_GAP + swing])


def compile_plan(intent, scn: Scenario, grasp: GraspCandidate | None) -> Plan:
    """Expand an intent into skills, inserting preconditions.

    Placing into a closed openable container prepends open(container); pour
    prepends pick(source) and returns the source to its origin. The result
    always passes check_preconditions.
    """
    action = intent.action
    targets = tuple(intent.target_objects)
    if action not in ACTION_SET:
        raise PlanningError(f"unknown action {action!r}")
    skills = []

    if action in ("open", "close"):
        obj = scn.object(targets[0])
        if not obj.openable:
            raise PlanningError(f"rule violated: {targets[0]!r} is not openable")
        skills.append(Skill(action, obj.name))

    elif action == "pour":
        src, dst = targets[0], targets[1]
        src_obj = scn.object(src)
        dst_obj = scn.object(dst)
        if not src_obj.pourable:
            raise PlanningError(f"rule violated: pour source {src!r} is not pourable")
        if not dst_obj.container:
            raise PlanningError(f"rule violated: pour destination {dst!r} is not a container")
        if not dst_obj.open:
            raise PlanningError(f"rule violated: pour destination {dst!r} is closed")
        if grasp is None:
            raise PlanningError("pour requires a selected grasp for the source")
        skills.append(Skill("pick", src, grasp=grasp))
        skills.append(Skill("pour_over", dst, pour_angle_deg=POUR_ANGLE_DEG))
        skills.append(Skill("place_at", src,
                            place_point=np.array(src_obj.pose.translation)))

    elif action == "pick_and_place":
        src, dst = targets[0], targets[1]
        src_obj = scn.object(src)
        dst_obj = scn.object(dst)
        if not src_obj.graspable:
            raise PlanningError(f"rule violated: {src!r} is not graspable")
        if grasp is None:
            raise PlanningError("pick_and_place requires a selected grasp")
        if dst_obj.container:
            if not dst_obj.open:
                if not dst_obj.openable:
                    raise PlanningError(
                        f"rule violated: container {dst!r} is closed and not openable")
                skills.append(Skill("open", dst))
            interior = dst_obj.interior_aabb()
            need = src_obj.aabb().extents
            room = interior.extents
            if (need > room + 1e-9).any():
                raise PlanningError(
                    f"rule violated: {src!r} does not fit inside {dst!r}")
            skills.append(Skill("pick", src, grasp=grasp))
            skills.append(Skill("place_inside", dst,
                                place_point=place_target(scn, dst, src_obj)))
        elif dst_obj.flat_surface:
            skills.append(Skill("pick", src, grasp=grasp))
            skills.append(Skill("place_on", dst,
                                place_point=place_target(scn, dst, src_obj)))
        else:
            raise PlanningError(
                f"rule violated: {dst!r} is neither a container nor a flat surface")

    elif action == "press":
        skills.append(Skill("press", targets[0]))

    elif action == "hand_over":
        src_obj = scn.object(targets[0])
        if not src_obj.graspable:
            raise PlanningError(f"rule violated: {targets[0]!r} is not graspable")
        if grasp is None:
            raise PlanningError("hand_over requires a selected grasp")
        skills.append(Skill("pick", targets[0], grasp=grasp))
        skills.append(Skill("hand_over", targets[0]))

    plan = Plan(tuple(skills), intent)
    check_preconditions(plan, scn)
    return plan


def check_preconditions(plan: Plan, scn: Scenario) -> None:
    """Static soundness pass over a plan against the scene's initial state.

    Tracks container open flags and the held object symbolically; raises
    PlanningError naming the violated rule. Shared by the compiler and the
    executor so hand-edited plans are re-checked before any motion.
    """
    open_state = {o.name: o.open for o in scn.objects if o.container}
    held = None
    for i, s in enumerate(plan.skills):
        where = f"skill {i + 1} {s.describe()}"
        if s.action in ("open", "close"):
            if held is not None:
                raise PlanningError(f"{where}: gripper busy holding {held!r}")
            open_state[s.object_name] = s.action == "open"
        elif s.action == "pick":
            if held is not None:
                raise PlanningError(f"{where}: already holding {held!r}")
            held = s.object_name
        elif s.action in ("place_inside", "place_on", "place_at", "pour_over", "hand_over"):
            if held is None:
                raise PlanningError(f"{where}: nothing is held")
            if s.action == "place_inside" and not open_state.get(s.object_name, True):
                raise PlanningError(
                    f"{where}: container {s.object_name!r} is closed at this point")
            if s.action in ("place_inside", "place_on", "place_at"):
                held = None
