"""Scripted-gaze trial drivers shared by the benchmark harness and gateway.

A gamma-mode trial walks the whole loop on a scenario: synthesize a gaze
trace from the scenario's script, detect fixations, query the intent
backend, build and select a grasp, compile the plan, and execute it
kinematically. Stage outcomes stay separate so intent, grasp, and
execution can be scored independently; a panel-mode trial replays a
scripted button sequence instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import BackendConfig
from .errors import GazemanipError
from .execution import MODES, TrialRecord, execute_plan
from .gaze import GazeConfig, GazeSample, detect_fixations
from .geometry import Pixel, back_project
from .grasp import GraspSet, build_grasp_set
from .intent import (GraspChoiceAnswer, IntentOption, IntentPrediction,
                     build_grasp_prompt, build_intent_prompt, predict_intent,
                     select_grasp)
from .panel import PanelLayout, panel_session
from .planning import compile_plan
from .scene import Camera, Scenario, extract_object_cloud, render

SAMPLE_HZ = 30.0
SACCADE_GAP_S = 0.3       # longer than the detector's merge gap, so dwells stay separate
JITTER_PX = 3.0           # uniform, keeps in-dwell dispersion well under the threshold

GRASPING_ACTIONS = ("pick_and_place", "pour", "hand_over")


def _cam(scn: Scenario, camera) -> Camera:
    if isinstance(camera, int):
        return scn.cameras[camera]
    if isinstance(camera, str):
        return scn.camera(camera)
    return camera


def object_pixel(scn: Scenario, camera, name: str) -> Pixel:
    """Stable on-object pixel: the componentwise median of the object's mask."""
    cam = _cam(scn, camera)
    ids = render(scn, cam).ids
    vv, uu = np.nonzero(ids == scn.index_of(name) + 1)
    if uu.size == 0:
        raise GazemanipError(f"object {name!r} not visible from camera {cam.name!r}")
    return Pixel(int(np.median(uu)), int(np.median(vv)))


def ground_pixel(scn: Scenario, camera, pix) -> np.ndarray:
    """Base-frame 3D point under a robot-camera pixel, via the rendered depth."""
    cam = _cam(scn, camera)
    pix = Pixel(*pix)
    mm = render(scn, cam).depth.at(pix)
    if mm <= 0:
        raise GazemanipError(f"no depth under pixel {tuple(pix)}")
    return cam.pose.apply(back_project(pix, mm, cam.intrinsics))


def synthesize_gaze(scn: Scenario, camera=0, seed: int = 0,
                    hz: float = SAMPLE_HZ) -> list:
    """Gaze samples realizing the scenario's script: one jittered dwell per
    entry, separated by sample-free saccade gaps. Deterministic per seed."""
    if not scn.gaze_script:
        raise GazemanipError(f"scenario {scn.name!r} has no gaze script")
    rng = np.random.default_rng(seed)
    samples = []
    t0 = 0.0
    for obj_name, dwell_s in scn.gaze_script:
        center = object_pixel(scn, camera, obj_name)
        # endpoint-inclusive so the dwell spans exactly dwell_s
        for i in range(int(round(dwell_s * hz)) + 1):
            du, dv = rng.uniform(-JITTER_PX, JITTER_PX, size=2)
            samples.append(GazeSample(round(t0 + i / hz, 6),
                                      Pixel(int(round(center.u + du)),
                                            int(round(center.v + dv)))))
        t0 += dwell_s + SACCADE_GAP_S
    return samples


def fixations_from_script(scn: Scenario, camera=0, seed: int = 0,
                          cfg: GazeConfig | None = None) -> list:
    samples = synthesize_gaze(scn, camera, seed)
    return detect_fixations(((s.timestamp, s.pix) for s in samples), cfg)


def default_options(scn: Scenario) -> list:
    """Deterministic option menu covering every plausible task in the scene.

    Enumeration follows scene object order: placements of each graspable onto
    containers and flat surfaces, pours from pourables into containers, a
    toggle for each openable, and a hand-over per graspable.
    """
    opts = []
    for src in scn.objects:
        if not src.graspable:
            continue
        for dst in scn.objects:
            if dst.name == src.name:
                continue
            if dst.container or dst.flat_surface:
                opts.append(IntentOption("pick_and_place", (src.name, dst.name)))
            if src.pourable and dst.container:
                opts.append(IntentOption("pour", (src.name, dst.name)))
    for obj in scn.objects:
        if obj.openable:
            opts.append(IntentOption("close" if obj.open else "open", (obj.name,)))
    for obj in scn.objects:
        if obj.graspable:
            opts.append(IntentOption("hand_over", (obj.name,)))
    if not opts:
        raise GazemanipError(f"scenario {scn.name!r} admits no task options")
    return opts


@dataclass
class TrialOutcome:
    """One trial with per-stage correctness.

    Stage flags are cumulative: a stage is only ok when every earlier stage
    was, so exec_ok implies grasp_ok implies intent_ok.
    """

    scenario_id: str
    mode: str
    seed: int
    intent_ok: bool = False
    grasp_ok: bool = False
    exec_ok: bool = False
    prediction: IntentPrediction | None = None
    choice: GraspChoiceAnswer | None = None
    grasp_set: GraspSet | None = None
    fixations: list = field(default_factory=list)
    record: TrialRecord | None = None
    error: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def success(self) -> bool:
        return self.intent_ok and self.grasp_ok and self.exec_ok

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "mode": self.mode,
            "seed": self.seed,
            "stages": {"intent_ok": self.intent_ok, "grasp_ok": self.grasp_ok,
                       "exec_ok": self.exec_ok},
            "prediction": None if self.prediction is None else self.prediction.to_dict(),
            "record": None if self.record is None else self.record.to_dict(),
            "error": self.error,
        }


def _failed(outcome: TrialOutcome, stage: str, err: Exception,
            started: float) -> TrialOutcome:
    outcome.error = f"{stage}: {err}"
    outcome.record = TrialRecord(
        scenario_id=outcome.scenario_id, mode=outcome.mode, success=False,
        failure_reason=outcome.error, wall_time_s=time.perf_counter() - started,
        sim_time_s=0.0, events=())
    return outcome


def run_gamma_trial(scn: Scenario, backend: BackendConfig, *, seed: int = 0,
                    grasp_seed: int = 0, camera=0, options=None,
                    style: str = "image_multiview",
                    gaze_cfg: GazeConfig | None = None,
                    gaze_samples=None,
                    grasp_view_angles=None, naive_grasp: bool = False,
                    policy: str = "abort_on_collision", on_event=None,
                    transport=None) -> TrialOutcome:
    """One scripted gaze -> intent -> grasp -> plan -> execute trial.

    ``seed`` drives the synthesized gaze jitter (the stochastic sensor
    input); the candidate sampler keeps its own ``grasp_seed`` so repeated
    trials of one scenario screen the same candidate geometry. Recorded
    ``gaze_samples`` ((t, u, v) robot-view points) replace the synthesized
    script when given.

    ``naive_grasp`` skips the swept-volume screen and takes the unpitched
    view-median candidate directly; combined with ``grasp_view_angles``
    it reproduces the failure modes the screening exists to prevent.
    """
    started = time.perf_counter()
    out = TrialOutcome(scn.name, "gamma", seed)
    try:
        if gaze_samples is not None:
            out.fixations = detect_fixations(
                ((t, (u, v)) for t, u, v in gaze_samples), gaze_cfg)
        else:
            out.fixations = fixations_from_script(scn, camera, seed, gaze_cfg)
        if not out.fixations:
            raise GazemanipError("gaze script produced no fixations")
    except (GazemanipError, ValueError) as e:
        return _failed(out, "gaze", e, started)

    try:
        frame = render(scn, _cam(scn, camera)).rgb
        vocabulary = [o.name for o in scn.objects]
        query = build_intent_prompt(frame, out.fixations,
                                    options or default_options(scn), vocabulary)
        out.prediction = predict_intent(query, backend, scenario=scn,
                                        camera=camera, transport=transport)
    except (GazemanipError, ValueError) as e:
        return _failed(out, "intent", e, started)
    if scn.expected_intent:
        out.intent_ok = (out.prediction.action == scn.expected_intent["action"]
                         and list(out.prediction.target_objects)
                         == list(scn.expected_intent["objects"]))
    else:
        out.intent_ok = True

    cand = None
    if out.prediction.action in GRASPING_ACTIONS:
        try:
            target = out.prediction.target_objects[0]
            obj = scn.object(target)
            cloud = extract_object_cloud(scn, target)
            gaze_point = ground_pixel(scn, camera, out.fixations[0].centroid)
            kwargs = {} if grasp_view_angles is None else {
                "angles_deg": tuple(grasp_view_angles)}
            out.grasp_set = build_grasp_set(cloud, gaze_point, shape_hint=obj.kind,
                                            target_object_id=scn.index_of(target),
                                            seed=grasp_seed, **kwargs)
            if naive_grasp:
                cand = next(c for c in out.grasp_set.candidates
                            if c.pitch_offset == 0.0)
            else:
                prompt = build_grasp_prompt(out.grasp_set, scn, out.prediction, style)
                out.choice = select_grasp(prompt, backend, scenario=scn,
                                          grasp_set=out.grasp_set, transport=transport)
                cand = out.grasp_set.by_label(out.choice.final_label)
        except (GazemanipError, ValueError) as e:
            return _failed(out, "grasp", e, started)
    out.grasp_ok = out.intent_ok

    try:
        plan = compile_plan(out.prediction, scn, cand)
        out.record = execute_plan(plan, scn, policy=policy,
                                  scenario_id=scn.name, on_event=on_event)
    except (GazemanipError, ValueError) as e:
        return _failed(out, "plan", e, started)
    out.exec_ok = out.grasp_ok and out.record.success
    if not out.record.success:
        out.error = out.record.failure_reason
    out.record = replace(out.record, wall_time_s=time.perf_counter() - started)
    return out


def run_panel_trial(scn: Scenario, *, seed: int = 0,
                    layout: PanelLayout | None = None,
                    hz: float = SAMPLE_HZ) -> TrialOutcome:
    """Replay the scenario's scripted button dwells through the panel baseline."""
    script = scn.task.get("panel_script")
    if not script:
        raise GazemanipError(f"scenario {scn.name!r} has no panel script")
    layout = layout or PanelLayout()
    rng = np.random.default_rng(seed)
    samples = []
    t0 = 0.0
    for button, seconds in script:
        u0, v0, u1, v1 = layout.region(button)
        cu, cv = (u0 + u1) / 2.0, (v0 + v1) / 2.0
        # endpoint-inclusive so the active run spans exactly `seconds`
        for i in range(int(round(seconds * hz)) + 1):
            du, dv = rng.uniform(-JITTER_PX, JITTER_PX, size=2)
            samples.append((round(t0 + i / hz, 6), cu + du, cv + dv))
        t0 += seconds + SACCADE_GAP_S
    started = time.perf_counter()
    record = panel_session(scn, samples, layout=layout, scenario_id=scn.name)
    ok = record.success
    out = TrialOutcome(scn.name, "panel", seed, intent_ok=ok, grasp_ok=ok,
                       exec_ok=ok,
                       record=replace(record,
                                      wall_time_s=time.perf_counter() - started))
    if not ok:
        out.error = record.failure_reason
    return out
