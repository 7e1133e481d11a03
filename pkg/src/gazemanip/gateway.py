"""HTTP gateway: live operator sessions over the pipeline.

Each session owns a world clone, a streaming fixation accumulator, and an
append-only event log with strictly increasing ids. Commands within one
session are serialized through the session condition lock; execution runs
on a background thread that reports through the same event log, so clients
can follow a trial by long-polling /events. Gaze keeps flowing during
execution, but intent inference is gated until the trial settles.
"""

from __future__ import annotations

import base64
import itertools
import threading
from dataclasses import dataclass, field as dc_field
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .backends import BackendConfig
from .config import AppConfig, load_config
from .errors import BackendFailureError, GazemanipError
from .execution import MODES, Executor, RobotState, HOME_POSE
from .gaze import FixationAccumulator
from .geometry import RigidTransform
from .grasp import build_grasp_set
from .intent import (IntentOption, IntentPrediction, build_grasp_prompt,
                     build_intent_prompt, png_bytes, predict_intent, select_grasp)
from .panel import PanelCommand, attempt_close, panel_step
from .pipeline import GRASPING_ACTIONS, default_options, ground_pixel
from .planning import compile_plan
from .scene import Scenario, extract_object_cloud, load_scenario, render
from . import scenarios as bundled

GAZE_BATCH_LIMIT = 512


class CreateSessionBody(BaseModel):
    scenario_id: str
    mode: Literal["gamma", "panel"] = "gamma"


class GazePoint(BaseModel):
    t_s: float
    u: float
    v: float


class GazeBatchBody(BaseModel):
    samples: list[GazePoint] = Field(min_length=1, max_length=GAZE_BATCH_LIMIT)


class OptionBody(BaseModel):
    action: str
    objects: list[str]


class InferBody(BaseModel):
    options: list[OptionBody] | None = None
    camera: int = 0


class ConfirmBody(BaseModel):
    accept: bool


class PanelBody(BaseModel):
    button: str
    held: bool
    dt: float = Field(default=1.0 / 30.0, gt=0.0)


@dataclass
class Session:
    id: str
    scenario_id: str
    mode: str
    world: Scenario
    acc: FixationAccumulator
    robot: RobotState
    status: str = "idle"
    camera: int = 0
    pending: IntentPrediction | None = None
    options: list = dc_field(default_factory=list)
    grasp_set: object = None
    choice: object = None
    plan: object = None
    record: object = None
    executor: Executor | None = None
    thread: threading.Thread | None = None
    events: list = dc_field(default_factory=list)
    cond: threading.Condition = dc_field(default_factory=threading.Condition)
    _ids: object = dc_field(default_factory=lambda: itertools.count(1))

    def emit(self, kind: str, **detail) -> dict:
        with self.cond:
            event = {"id": next(self._ids), "kind": kind}
            event.update(detail)
            self.events.append(event)
            self.cond.notify_all()
            return event

    def events_after(self, after: int, wait_s: float = 0.0) -> list:
        with self.cond:
            fresh = [e for e in self.events if e["id"] > after]
            if fresh or wait_s <= 0:
                return fresh
            self.cond.wait(timeout=min(wait_s, 30.0))
            return [e for e in self.events if e["id"] > after]


def _scenario_sources(scenario_dir=None) -> dict:
    sources = {name: (lambda n=name: bundled.build(n))
               for name in bundled.SCENARIO_NAMES}
    if scenario_dir is not None:
        from pathlib import Path

        for path in sorted(Path(scenario_dir).glob("*.json")):
            sources[path.stem] = (lambda p=path: load_scenario(p))
    return sources


def create_app(config: AppConfig | None = None, scenario_dir=None,
               transport=None) -> FastAPI:
    """Build the gateway app; scenario ids default to the bundled corpus."""
    cfg = config or load_config()
    sources = _scenario_sources(scenario_dir)
    sessions: dict[str, Session] = {}
    store_lock = threading.Lock()
    counter = itertools.count(1)

    app = FastAPI(title="gazemanip gateway", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def _bad_body(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        field_path = ".".join(str(p) for p in first.get("loc", ()))
        return JSONResponse(status_code=400, content={
            "detail": first.get("msg", "invalid request"), "field": field_path})

    def _session(sid: str) -> Session:
        with store_lock:
            ses = sessions.get(sid)
        if ses is None:
            raise HTTPException(404, detail=f"no session {sid!r}")
        return ses

    # -- lifecycle -----------------------------------------------------------

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        maker = sources.get(body.scenario_id)
        if maker is None:
            raise HTTPException(404, detail=f"unknown scenario {body.scenario_id!r}")
        scn = maker().clone()
        start = scn.task.get("panel_tcp")
        robot = RobotState(RigidTransform(
            HOME_POSE.rotation,
            np.asarray(start, dtype=float) if start is not None
            else HOME_POSE.translation))
        with store_lock:
            sid = f"s{next(counter):04d}"
            ses = Session(sid, body.scenario_id, body.mode, scn,
                          FixationAccumulator(cfg.gaze), robot)
            sessions[sid] = ses
        ses.emit("session_created", scenario_id=body.scenario_id, mode=body.mode)
        return {"session_id": sid, "scenario_id": body.scenario_id,
                "mode": body.mode, "status": ses.status}

    @app.get("/sessions/{sid}")
    def session_state(sid: str):
        ses = _session(sid)
        with ses.cond:
            return {
                "session_id": ses.id, "scenario_id": ses.scenario_id,
                "mode": ses.mode, "status": ses.status,
                "fixations": [f.to_dict() for f in ses.acc.fixations()],
                "pending": None if ses.pending is None else ses.pending.to_dict(),
                "tcp": [round(float(v), 6) for v in ses.robot.tcp_pose.translation],
            }

    @app.get("/sessions/{sid}/frame")
    def frame(sid: str, camera: int = 0):
        ses = _session(sid)
        with ses.cond:
            if not 0 <= camera < len(ses.world.cameras):
                raise HTTPException(400, detail=f"camera {camera} out of range")
            cam = ses.world.cameras[camera]
            res = render(ses.world, cam)
            visible = {}
            for i, obj in enumerate(ses.world.objects):
                visible[obj.name] = int(np.count_nonzero(res.ids == i + 1))
            return {
                "camera": cam.name, "width": res.rgb.shape[1],
                "height": res.rgb.shape[0],
                "png_base64": base64.b64encode(png_bytes(res.rgb)).decode("ascii"),
                "objects": [{
                    "name": o.name, "kind": o.kind, "color": list(o.color),
                    "graspable": o.graspable, "container": o.container,
                    "openable": o.openable, "open": o.open,
                    "visible_px": visible[o.name],
                } for o in ses.world.objects],
            }

    # -- gaze and intent -------------------------------------------------------

    @app.post("/sessions/{sid}/gaze")
    def ingest_gaze(sid: str, body: GazeBatchBody):
        ses = _session(sid)
        with ses.cond:
            before = len(ses.acc.fixations())
            try:
                for s in body.samples:
                    ses.acc.push(s.t_s, (s.u, s.v))
            except ValueError as e:
                raise HTTPException(400, detail=str(e))
            fixations = ses.acc.fixations()
        for fx in fixations[before:]:
            ses.emit("fixation", fixation=fx.to_dict())
        return {"ingested": len(body.samples),
                "fixations": [f.to_dict() for f in fixations]}

    @app.post("/sessions/{sid}/infer_intent")
    def infer_intent(sid: str, body: InferBody):
        ses = _session(sid)
        with ses.cond:
            if ses.mode != "gamma":
                raise HTTPException(409, detail="intent inference is a gamma-mode command")
            if ses.status == "executing":
                raise HTTPException(409, detail="execution in progress; inference is gated")
            fixations = ses.acc.fixations()
            if not fixations:
                raise HTTPException(409, detail="no fixations to infer from")
            if body.options:
                try:
                    options = [IntentOption(o.action, tuple(o.objects))
                               for o in body.options]
                except ValueError as e:
                    raise HTTPException(400, detail=str(e))
            else:
                options = default_options(ses.world)
            ses.camera = body.camera
            frame_rgb = render(ses.world, ses.world.cameras[body.camera]).rgb
            query = build_intent_prompt(frame_rgb, fixations, options,
                                        [o.name for o in ses.world.objects])
            try:
                pred = predict_intent(query, cfg.backend, scenario=ses.world,
                                      camera=body.camera, transport=transport)
            except BackendFailureError as e:
                ses.emit("backend_failure", stage="intent", error=str(e))
                raise HTTPException(502, detail=f"intent backend failed: {e}")
            except GazemanipError as e:
                ses.emit("intent_failed", error=str(e))
                raise HTTPException(409, detail=str(e))
            ses.pending = pred
            ses.options = options
            ses.status = "awaiting_confirmation"
        ses.emit("intent_predicted", prediction=pred.to_dict())
        return {"status": "awaiting_confirmation", "prediction": pred.to_dict()}

    @app.post("/sessions/{sid}/confirm")
    def confirm(sid: str, body: ConfirmBody):
        ses = _session(sid)
        with ses.cond:
            if ses.pending is None or ses.status != "awaiting_confirmation":
                raise HTTPException(409, detail="nothing awaiting confirmation")
            if not body.accept:
                ses.pending = None
                ses.acc.reset()
                ses.status = "idle"
                ses.emit("rejected")
                return {"status": "idle", "fixations": []}
            pred = ses.pending
            cand = None
            try:
                if pred.action in GRASPING_ACTIONS:
                    target = pred.target_objects[0]
                    cloud = extract_object_cloud(ses.world, target)
                    fixations = ses.acc.fixations()
                    gaze_point = ground_pixel(ses.world, ses.camera,
                                              fixations[0].centroid)
                    ses.grasp_set = build_grasp_set(
                        cloud, gaze_point, shape_hint=ses.world.object(target).kind,
                        target_object_id=ses.world.index_of(target))
                    prompt = build_grasp_prompt(ses.grasp_set, ses.world, pred,
                                                "image_multiview")
                    ses.choice = select_grasp(prompt, cfg.backend,
                                              scenario=ses.world,
                                              grasp_set=ses.grasp_set,
                                              transport=transport)
                    cand = ses.grasp_set.by_label(ses.choice.final_label)
                ses.plan = compile_plan(pred, ses.world, cand)
            except BackendFailureError as e:
                ses.emit("backend_failure", stage="grasp", error=str(e))
                raise HTTPException(502, detail=f"grasp backend failed: {e}")
            except (GazemanipError, ValueError) as e:
                ses.emit("plan_failed", error=str(e))
                raise HTTPException(409, detail=str(e))
            ses.status = "ready"
        detail = {"plan": [s.describe() for s in ses.plan.skills]}
        if ses.choice is not None:
            detail["final_label"] = ses.choice.final_label
            detail["valid_labels"] = sorted(ses.choice.valid_labels)
        ses.emit("plan_compiled", **detail)
        return {"status": "ready", **detail}

    # -- execution ---------------------------------------------------------------

    def _run_execution(ses: Session, plan):
        record = ses.executor.run_plan(plan, scenario_id=ses.scenario_id,
                                       mode=ses.mode)
        with ses.cond:
            ses.record = record
            ses.world = ses.executor.world
            if record.failure_reason == "aborted":
                ses.status = "aborted"
            else:
                ses.status = "done" if record.success else "failed"
            ses.pending = None
            ses.acc.reset()
        ses.emit("record", record=record.to_dict())

    @app.post("/sessions/{sid}/execute")
    def execute(sid: str):
        ses = _session(sid)
        with ses.cond:
            if ses.status == "executing":
                raise HTTPException(409, detail="already executing")
            if ses.plan is None or ses.status != "ready":
                raise HTTPException(409, detail="no compiled plan; confirm an intent first")
            def forward(ev):
                fields = dict(ev)
                kind = fields.pop("kind")
                # executor ids restart per run; session ids stay authoritative
                fields["exec_id"] = fields.pop("id")
                ses.emit(kind, **fields)

            ses.executor = Executor(ses.world, on_event=forward)
            ses.status = "executing"
            plan, ses.plan = ses.plan, None
            ses.thread = threading.Thread(target=_run_execution,
                                          args=(ses, plan), daemon=True)
        ses.emit("execution_started", skills=[s.describe() for s in plan.skills])
        ses.thread.start()
        return {"status": "executing"}

    @app.post("/sessions/{sid}/abort")
    def abort(sid: str):
        ses = _session(sid)
        with ses.cond:
            if ses.status == "executing" and ses.executor is not None:
                ses.executor.request_abort()
                return {"status": "aborting"}
            # no-op on repeat or when idle: report the settled state
            return {"status": ses.status}

    @app.get("/sessions/{sid}/events")
    def events(sid: str, after: int = 0, wait_s: float = 0.0,
               stream: bool = False, max_s: float = 30.0):
        ses = _session(sid)
        if not stream:
            fresh = ses.events_after(after, wait_s)
            return {"events": fresh,
                    "next_after": fresh[-1]["id"] if fresh else after}

        def ndjson():
            import json as _json
            import time as _time

            cursor = after
            deadline = _time.monotonic() + max_s
            while _time.monotonic() < deadline:
                fresh = ses.events_after(cursor, wait_s=1.0)
                for e in fresh:
                    cursor = e["id"]
                    yield _json.dumps(e) + "\n"
                with ses.cond:
                    settled = ses.status in ("done", "failed", "aborted")
                if settled and not fresh:
                    return

        return StreamingResponse(ndjson(), media_type="application/x-ndjson")

    # -- panel mode ----------------------------------------------------------------

    @app.post("/sessions/{sid}/panel")
    def panel(sid: str, body: PanelBody):
        ses = _session(sid)
        with ses.cond:
            if ses.mode != "panel":
                raise HTTPException(409, detail="panel commands need a panel-mode session")
            try:
                cmd = PanelCommand(body.button, body.held)
            except ValueError as e:
                raise HTTPException(400, detail=str(e))
            held_before = ses.robot.held_name
            if body.held and body.button == "close_gripper":
                # contact resolution once; repeat holds while grasping are no-ops
                if ses.robot.held is None:
                    ses.robot = attempt_close(ses.world, ses.robot)
            else:
                ses.robot = panel_step(ses.robot, cmd, body.dt)
            if ses.robot.held is not None:
                obj = ses.world.object(ses.robot.held_name)
                obj.pose = ses.robot.held.pose_at(ses.robot.tcp_pose)
            state = {
                "tcp": [round(float(v), 6) for v in ses.robot.tcp_pose.translation],
                "gripper_width": round(ses.robot.gripper_width, 6),
                "held": ses.robot.held_name,
                "clamped": ses.robot.clamped,
            }
        if ses.robot.held_name != held_before:
            if ses.robot.held_name is not None:
                ses.emit("grasped", object=ses.robot.held_name)
            else:
                ses.emit("released", object=held_before)
        return state

    # -- service metadata -------------------------------------------------------------

    @app.get("/config")
    def config_doc():
        doc = cfg.to_dict()
        doc["backend"].pop("api_key_env", None)
        doc["modes"] = list(MODES)
        doc["gaze_sample_hz"] = 30.0
        doc["gaze_batch_size"] = 10
        return doc

    @app.get("/scenarios")
    def scenario_index():
        out = []
        for name in sorted(sources):
            scn = sources[name]()
            out.append({"id": name, "difficulty": scn.difficulty,
                        "objects": [o.name for o in scn.objects],
                        "has_gaze_script": bool(scn.gaze_script),
                        "has_panel_script": "panel_script" in scn.task})
        return {"scenarios": out}

    @app.get("/spec")
    def spec():
        return app.openapi()

    return app
