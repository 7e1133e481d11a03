"""Intent prediction and contextual grasp selection.

Two cascaded multiple-choice questions: (1) what does the user want, asked
over a gaze-annotated robot view, and (2) which grasp pose fits the task,
asked over labeled grasp renders (two views per candidate, a 3x3 grid, or a
hover video around the scene cloud). Both run against a pluggable backend:
a remote model over HTTP, or the deterministic geometric oracle used by the
benchmarks. Prompt builders are pure; identical inputs give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .backends import BackendConfig, BackendRequest, RemoteBackend, complete_json
from .errors import (AllCandidatesInvalidError, AmbiguousIntentError, EmptyInputError,
                     IntentRuleError, NoObjectAtGazeError, UnsupportedStyleError)
from .gaze import annotate_fixations
from .geometry import BehindCameraError, CameraIntrinsics, Pixel, RigidTransform, project
from .grasp import GraspCandidate, GraspSet
from .motion import (HeldObject, approach_segment, in_workspace, sweep_clearance,
                     transit_segments)
from .planning import ACTION_SET, HANDOVER_POINT, place_target, pour_waypoint
from .scene import Camera, Scenario, camera_look_at, render, segment_at

PROMPT_STYLES = ("image_multiview", "image_grid", "video_hover")
HOVER_FRAME_COUNT = 32
HOVER_FRAME_SIZE = (360, 480)   # rows, cols

# label colors (RGB), distinct for up to nine candidates
LABEL_PALETTE = (
    (230, 60, 50), (70, 170, 60), (60, 110, 230), (240, 170, 40), (160, 60, 200),
    (60, 200, 200), (240, 100, 180), (150, 150, 60), (120, 220, 120),
)


def png_bytes(rgb: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ValueError("PNG encoding failed")
    return bytes(buf.tobytes())


@dataclass(frozen=True)
class IntentOption:
    """One multiple-choice entry: structured action plus optional free text."""

    action: str
    objects: tuple
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.action not in ACTION_SET:
            raise ValueError(f"unknown action {self.action!r}")

    def render(self) -> str:
        return self.text or f"{self.action}({', '.join(self.objects)})"

    def to_dict(self) -> dict:
        d = {"action": self.action, "objects": list(self.objects)}
        if self.text:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IntentOption":
        return cls(d["action"], tuple(d["objects"]), d.get("text", ""))


@dataclass(frozen=True)
class IntentQuery:
    annotated_png: bytes
    fixations: tuple
    options: tuple
    vocabulary: tuple
    prompt_text: str


@dataclass(frozen=True)
class IntentPrediction:
    chosen_option_index: int        # 0-based into the option list
    action: str
    target_objects: tuple
    rationale_text: str
    confidence: float | None = None

    def to_dict(self) -> dict:
        return {"option_index": self.chosen_option_index, "action": self.action,
                "objects": list(self.target_objects), "rationale": self.rationale_text,
                "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "IntentPrediction":
        return cls(d["option_index"], d["action"], tuple(d["objects"]),
                   d.get("rationale", ""), d.get("confidence"))


def build_intent_prompt(frame_rgb: np.ndarray, fixations, options,
                        vocabulary) -> IntentQuery:
    """Annotate the robot view and compose the two-step instruction text.

    The text carries, in order: the vocabulary, the fixation count and order
    semantics, the identify-then-infer instruction, the numbered options, and
    the required answer schema.
    """
    options = tuple(options)
    fixations = tuple(fixations)
    vocabulary = tuple(vocabulary)
    if not options:
        raise EmptyInputError("intent query needs at least one option")
    if not fixations:
        raise EmptyInputError("intent query needs at least one fixation")
    n = len(fixations)
    points = ", ".join(f"gaze point {i}" for i in range(1, n + 1))
    lines = [
        "You assist a tabletop robot driven by the user's gaze.",
        "",
        "Object vocabulary: " + ", ".join(vocabulary) + ".",
        "",
        f"The attached robot-camera image is annotated with {n} numbered gaze "
        f"fixation{'s' if n != 1 else ''} ({points}). Dot numbers give the order in "
        "which the user looked; later fixations usually mark the destination of the action.",
        "",
        "Step 1: for each gaze point, identify the vocabulary object under or nearest the dot.",
        "Step 2: infer the single task the user intends from those objects, in that order.",
        "",
        "Choose exactly one option:",
    ]
    for i, opt in enumerate(options, 1):
        lines.append(f"{i}. {opt.render()}")
    lines += [
        "",
        'Answer with JSON only: {"option": <option number>, "action": "<action>", '
        '"objects": ["<object>", ...], "rationale": "<one sentence>"}',
    ]
    annotated = annotate_fixations(frame_rgb, fixations)
    return IntentQuery(png_bytes(annotated), fixations, options, vocabulary,
                       "\n".join(lines))


def _fixation_objects(scn: Scenario, camera, fixations, margin: int = 20):
    """Map each fixation centroid to the scene object under or near it."""
    ids = render(scn, camera).ids
    out = []
    for fix in fixations:
        idx = segment_at(scn, camera, Pixel(*fix.centroid), margin=margin, ids=ids)
        out.append(scn.objects[idx])
    return out


def _rule_intent(objs) -> tuple:
    """Ordered first-match rule table over fixated objects.

    (pourable -> container) = pour; (graspable -> container) = pick_and_place,
    whether the container is open or openable-but-closed; (graspable -> flat
    surface) = pick_and_place; a single fixation on an openable toggles it.
    Returns (action, target names, rationale); raises IntentRuleError when
    nothing matches.
    """
    if len(objs) == 1:
        o = objs[0]
        if o.openable:
            action = "close" if o.open else "open"
            return action, (o.name,), f"single fixation on openable {o.name}: {action} it"
        raise IntentRuleError(
            f"single fixation on {o.name!r} matches no rule (not openable)")
    src, dst = objs[0], objs[-1]
    if src.pourable and dst.container:
        return "pour", (src.name, dst.name), (
            f"gaze went {src.name} (pourable) to {dst.name} (container): pour")
    if src.graspable and dst.container:
        how = "open" if dst.open else ("closed but openable" if dst.openable else "sealed")
        return "pick_and_place", (src.name, dst.name), (
            f"gaze went {src.name} (graspable) to {dst.name} (container, {how}): place inside")
    if src.graspable and dst.flat_surface:
        return "pick_and_place", (src.name, dst.name), (
            f"gaze went {src.name} (graspable) to {dst.name} (flat surface): place on it")
    raise IntentRuleError(
        f"no rule covers fixated objects {[o.name for o in objs]!r}")


def _oracle_intent(query: IntentQuery, scn: Scenario, camera) -> IntentPrediction:
    if isinstance(camera, int):
        camera = scn.cameras[camera]
    try:
        objs = _fixation_objects(scn, camera, query.fixations)
    except NoObjectAtGazeError as exc:
        raise IntentRuleError(f"fixation grounds on no object: {exc}") from exc
    action, targets, rationale = _rule_intent(objs)
    matches = [i for i, opt in enumerate(query.options)
               if opt.action == action and opt.objects == targets]
    if not matches:
        raise IntentRuleError(
            f"no option encodes {action}({', '.join(targets)})")
    if len(matches) > 1:
        raise AmbiguousIntentError(
            f"{len(matches)} options encode {action}({', '.join(targets)})",
            tied_options=matches)
    return IntentPrediction(matches[0], action, targets, rationale, None)


def _validated_intent(doc: dict, query: IntentQuery) -> IntentPrediction:
    idx = int(doc["option"]) - 1
    if not 0 <= idx < len(query.options):
        raise ValueError(f"option {doc['option']} out of range 1..{len(query.options)}")
    action = str(doc["action"])
    if action not in ACTION_SET:
        raise ValueError(f"unknown action {action!r}")
    objects = tuple(str(o) for o in doc.get("objects", ()))
    for o in objects:
        if o not in query.vocabulary:
            raise ValueError(f"object {o!r} not in vocabulary")
    conf = doc.get("confidence")
    return IntentPrediction(idx, action, objects, str(doc.get("rationale", "")),
                            float(conf) if conf is not None else None)


def predict_intent(query: IntentQuery, backend: BackendConfig, *,
                   scenario: Scenario | None = None, camera=0,
                   transport=None) -> IntentPrediction:
    """Answer the intent question with the configured backend.

    The oracle grounds each fixation via segment_at and applies the rule
    table; it needs the scenario. The remote path sends the annotated image
    plus prompt and schema-validates the JSON reply, retrying on parse
    failures up to the configured limit.
    """
    if backend.kind == "oracle":
        if scenario is None:
            raise ValueError("oracle intent prediction needs the scenario")
        return _oracle_intent(query, scenario, camera)
    client = transport or RemoteBackend(backend)
    req = BackendRequest(query.prompt_text, images=(query.annotated_png,))
    holder = {}

    def _check(doc):
        holder["pred"] = _validated_intent(doc, query)

    complete_json(client, req, validate=_check, max_retries=backend.max_retries)
    return holder["pred"]


# ---------------------------------------------------------------------------
# grasp choice


@dataclass(frozen=True)
class GraspChoicePrompt:
    style: str
    images: tuple                  # PNG bytes; meaning depends on style
    prompt_text: str
    candidate_labels: tuple
    task_context: IntentPrediction
    color_map: dict | None = None  # label -> RGB, video style only


@dataclass(frozen=True)
class GraspChoiceAnswer:
    per_candidate_notes: dict      # label -> {stability, collision_risk, reachability}
    valid_labels: tuple
    final_label: int

    def __post_init__(self):
        if self.final_label not in self.valid_labels:
            raise ValueError(
                f"final label {self.final_label} not in valid set {self.valid_labels}")


def _glyph_points(cand: GraspCandidate) -> np.ndarray:
    """Key points of a U-shaped gripper glyph in the base frame."""
    w = cand.width / 2.0
    local = np.array([
        [-w, 0.0, 0.0], [-w, 0.0, -0.05],       # left finger tip / back
        [+w, 0.0, 0.0], [+w, 0.0, -0.05],       # right finger tip / back
        [0.0, 0.0, -0.05], [0.0, 0.0, -0.09],   # palm / wrist
    ])
    return cand.pose.apply(local)


def _draw_glyph(img: np.ndarray, cand: GraspCandidate, cam: Camera,
                color, label: int | None = None) -> None:
    """Project and draw one grasp glyph; silently skipped if behind camera."""
    pts_cam = cam.pose.inverse().apply(_glyph_points(cand))
    try:
        px = [project(p, cam.intrinsics) for p in pts_cam]
    except BehindCameraError:
        return
    pix = [(int(round(p.u)), int(round(p.v))) for p in px]
    for a, b in ((0, 1), (2, 3), (1, 4), (3, 4), (4, 5)):
        cv2.line(img, pix[a], pix[b], color, 2, cv2.LINE_8)
    if label is not None:
        org = (pix[5][0] + 4, pix[5][1] - 4)
        cv2.putText(img, str(label), org, cv2.FONT_HERSHEY_SIMPLEX, 0.7, (0, 0, 0), 3,
                    cv2.LINE_8)
        cv2.putText(img, str(label), org, cv2.FONT_HERSHEY_SIMPLEX, 0.7, (255, 255, 255),
                    1, cv2.LINE_8)


def _scene_cloud(scn: Scenario, stride: int = 4) -> np.ndarray:
    """Coarse base-frame cloud of everything visible, for hover frames."""
    from .geometry import back_project

    pts = []
    for cam in scn.cameras:
        res = render(scn, cam.name)
        d = res.depth.data[::stride, ::stride]
        vs, us = np.nonzero(d > 0)
        k = cam.intrinsics
        z = d[vs, us] * 0.001
        u = us * stride
        v = vs * stride
        x = (u - k.cx) * z / k.fx
        y = (v - k.cy) * z / k.fy
        pts.append(cam.pose.apply(np.column_stack([x, y, z])))
    return np.concatenate(pts, axis=0)


def _hover_frames(scn: Scenario, grasp_set: GraspSet, colors: dict) -> list:
    """Orbit the scene cloud; every frame shows all candidates color-coded
    plus a legend strip mapping colors to labels."""
    cloud = _scene_cloud(scn)
    center = cloud.mean(axis=0)
    radius = 2.2 * float(np.linalg.norm(cloud - center, axis=1).max())
    h, w = HOVER_FRAME_SIZE
    k = CameraIntrinsics(fx=300.0, fy=300.0, cx=w / 2.0, cy=h / 2.0, width=w, height=h)
    frames = []
    for i in range(HOVER_FRAME_COUNT):
        az = 2.0 * math.pi * i / HOVER_FRAME_COUNT
        eye = center + np.array([radius * math.cos(az), radius * math.sin(az),
                                 0.6 * radius])
        pose = camera_look_at(eye, center)
        cam = Camera("hover", k, pose)
        img = np.full((h, w, 3), 18, dtype=np.uint8)
        pts_cam = pose.inverse().apply(cloud)
        ok = pts_cam[:, 2] > 1e-6
        z = pts_cam[ok, 2]
        us = np.rint(pts_cam[ok, 0] * k.fx / z + k.cx).astype(int)
        vs = np.rint(pts_cam[ok, 1] * k.fy / z + k.cy).astype(int)
        keep = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
        img[vs[keep], us[keep]] = (110, 110, 110)
        for cand in grasp_set.candidates:
            _draw_glyph(img, cand, cam, colors[cand.label], cand.label)
        for j, cand in enumerate(grasp_set.candidates):
            y0 = 8 + 18 * j
            cv2.rectangle(img, (8, y0), (22, y0 + 12), colors[cand.label], -1)
            cv2.putText(img, f"pose {cand.label}", (28, y0 + 11),
                        cv2.FONT_HERSHEY_SIMPLEX, 0.4, (235, 235, 235), 1, cv2.LINE_8)
        frames.append(png_bytes(img))
    return frames


def _grasp_prompt_text(grasp_set: GraspSet, intent: IntentPrediction, style: str) -> str:
    labels = ", ".join(str(c.label) for c in grasp_set.candidates)
    task = f"{intent.action}({', '.join(intent.target_objects)})"
    style_line = {
        "image_multiview": "Each candidate grasp is shown in two camera views, "
                           "labeled with its number.",
        "image_grid": "The single image is a 3x3 grid of labeled candidate grasps.",
        "video_hover": "The frames orbit the scene point cloud; every grasp is drawn "
                       "in its own color (see the in-frame legend).",
    }[style]
    return "\n".join([
        f"Task context: the user wants {task}. {intent.rationale_text}".rstrip(),
        "",
        f"There are {len(grasp_set)} candidate grasp poses, labeled {labels}. {style_line}",
        "",
        "For every pose, analyze its stability, collision risk, or reachability in "
        "extensive detail. Then give the subset of valid poses and select the single "
        "best final pose.",
        "",
        'Answer with JSON only: {"poses": {"<label>": {"stability": "...", '
        '"collision_risk": "...", "reachability": "..."}}, "valid": [<labels>], '
        '"final": <label>}',
    ])


def build_grasp_prompt(grasp_set: GraspSet, scn: Scenario, intent: IntentPrediction,
                       style: str) -> GraspChoicePrompt:
    """Compose the grasp-choice question in one of the three visual styles."""
    if style not in PROMPT_STYLES:
        raise ValueError(f"style must be one of {PROMPT_STYLES}, got {style!r}")
    if len(grasp_set) == 0:
        raise EmptyInputError("grasp prompt needs at least one candidate")
    labels = tuple(c.label for c in grasp_set.candidates)
    text = _grasp_prompt_text(grasp_set, intent, style)

    if style == "video_hover":
        colors = {c.label: LABEL_PALETTE[(c.label - 1) % len(LABEL_PALETTE)]
                  for c in grasp_set.candidates}
        return GraspChoicePrompt(style, tuple(_hover_frames(scn, grasp_set, colors)),
                                 text, labels, intent, colors)

    views = [(cam, render(scn, cam.name).rgb) for cam in scn.cameras[:2]]
    if style == "image_multiview":
        images = []
        for cand in grasp_set.candidates:
            for cam, rgb in views:
                img = rgb.copy()
                _draw_glyph(img, cand, cam, (250, 220, 40), cand.label)
                images.append(png_bytes(img))
        return GraspChoicePrompt(style, tuple(images), text, labels, intent)

    # image_grid: 3x3 concatenation of per-candidate primary-view tiles
    cam, rgb = views[0]
    tiles = []
    for cand in grasp_set.candidates:
        img = rgb.copy()
        _draw_glyph(img, cand, cam, (250, 220, 40), cand.label)
        tiles.append(img)
    blank = np.zeros_like(rgb)
    while len(tiles) < 9:
        tiles.append(blank)
    rows = [np.concatenate(tiles[r * 3:(r + 1) * 3], axis=1) for r in range(3)]
    return GraspChoicePrompt(style, (png_bytes(np.concatenate(rows, axis=0)),),
                             text, labels, intent)


def _candidate_sweep(scn: Scenario, cand: GraspCandidate, intent: IntentPrediction):
    """TCP path legs for one candidate under the intended task.

    Returns (free segments, held segments, held payload). The payload rides
    the TCP from the close onward; the pick target itself is never an
    obstacle.
    """
    target = scn.object(intent.target_objects[0])
    t_rel = cand.pose.inverse() @ target.pose
    held = HeldObject(t_rel, target.local_half_extents())
    offset = cand.pose.rotation @ t_rel.translation

    def tcp_for(obj_point):
        return np.asarray(obj_point, dtype=float) - offset

    if intent.action == "pick_and_place":
        goals = [tcp_for(place_target(scn, intent.target_objects[1], target))]
    elif intent.action == "pour":
        goals = [tcp_for(pour_waypoint(scn, intent.target_objects[1], target)),
                 tcp_for(target.pose.translation)]
    elif intent.action == "hand_over":
        goals = [HANDOVER_POINT]
    else:
        raise ValueError(f"action {intent.action!r} does not take a grasp")

    held_segments = []
    pose = cand.pose
    for g in goals:
        legs = transit_segments(pose, g)
        held_segments.extend(legs)
        pose = legs[-1].end
    return [approach_segment(cand.pose)], held_segments, held


def oracle_select_grasp(scn: Scenario, grasp_set: GraspSet,
                        intent: IntentPrediction) -> GraspChoiceAnswer:
    """Swept-volume screening: collision of the gripper (and payload) along
    pick -> lift -> transport -> place against every non-target collision box,
    plus workspace reachability. Picks the largest-clearance collision-free
    label; ties break toward the lowest label.
    """
    ti = scn.index_of(intent.target_objects[0])
    obstacles = []
    obstacle_names = []
    for j, o in enumerate(scn.objects):
        if j == ti:
            continue
        for box in o.collision_aabbs():
            obstacles.append(box)
            obstacle_names.append(o.name)

    notes = {}
    clearances = {}
    violations = {}
    for cand in grasp_set.candidates:
        free_legs, held_legs, held = _candidate_sweep(scn, cand, intent)
        reach_ok = all(in_workspace(p.translation)
                       for seg in free_legs + held_legs for p in seg.poses)
        c_free, hit_free = sweep_clearance(free_legs, cand.width, obstacles)
        c_held, hit_held = sweep_clearance(held_legs, cand.width, obstacles, held=held)
        hit = hit_free or hit_held
        clearance = min(c_free, c_held)
        if not reach_ok:
            risk = "path leaves the reachable workspace"
            violations[cand.label] = risk
        elif hit:
            risk = f"hits {obstacle_names[hit[1]]} during {hit[0]}"
            violations[cand.label] = risk
        else:
            risk = ("no obstacle nearby" if math.isinf(clearance)
                    else f"clear, min gap {clearance * 1000.0:.0f} mm")
            clearances[cand.label] = clearance
        notes[cand.label] = {
            "stability": f"width {cand.width * 1000.0:.0f} mm, "
                         f"generator score {cand.score:.2f}",
            "collision_risk": risk,
            "reachability": "within workspace shell" if reach_ok else "out of reach",
        }
    if not clearances:
        raise AllCandidatesInvalidError(
            "every candidate collides or is unreachable", violations=violations)
    valid = tuple(sorted(clearances))
    final = min(valid, key=lambda lbl: (-clearances[lbl], lbl))
    return GraspChoiceAnswer(notes, valid, final)


def _validated_choice(doc: dict, labels: tuple) -> GraspChoiceAnswer:
    valid = tuple(int(v) for v in doc["valid"])
    final = int(doc["final"])
    label_set = set(labels)
    if not set(valid) <= label_set:
        raise ValueError(f"valid set {valid} not within labels {labels}")
    notes = {}
    for key, entry in dict(doc.get("poses", {})).items():
        lbl = int(key)
        if lbl not in label_set:
            raise ValueError(f"notes reference unknown label {lbl}")
        notes[lbl] = {field: str(entry.get(field, ""))
                      for field in ("stability", "collision_risk", "reachability")}
    return GraspChoiceAnswer(notes, valid, final)   # final-in-valid checked there


def select_grasp(prompt: GraspChoicePrompt, backend: BackendConfig, *,
                 scenario: Scenario | None = None, grasp_set: GraspSet | None = None,
                 transport=None) -> GraspChoiceAnswer:
    """Answer the grasp question; oracle path screens geometry directly."""
    if backend.kind == "oracle":
        if scenario is None or grasp_set is None:
            raise ValueError("oracle grasp selection needs the scenario and grasp set")
        return oracle_select_grasp(scenario, grasp_set, prompt.task_context)
    if prompt.style == "video_hover" and not backend.video_capable:
        raise UnsupportedStyleError("backend does not support video prompts")
    client = transport or RemoteBackend(backend)
    if prompt.style == "video_hover":
        req = BackendRequest(prompt.prompt_text, video_frames=prompt.images)
    else:
        req = BackendRequest(prompt.prompt_text, images=prompt.images)
    holder = {}

    def _check(doc):
        holder["ans"] = _validated_choice(doc, prompt.candidate_labels)

    complete_json(client, req, validate=_check, max_retries=backend.max_retries)
    return holder["ans"]
