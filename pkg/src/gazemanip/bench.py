"""Offline benchmark harness: manifests, case runners, scoring, and plots.

A manifest is a JSON list of cases. Each case names a scenario file
(relative to the manifest), a kind (intent, grasp, end_to_end), the inputs
needed to reproduce it, and the answer key it is scored against. The whole
manifest is validated, and every scenario reference loaded, before the
first case runs.

Latency on intent and grasp cases is measured around the backend call
only, excluding rendering and prompt assembly, so recorded transcripts
replay to comparable numbers. End-to-end records carry the full trial wall
time instead, which is the quantity the per-mode plots report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import jsonschema

from .backends import BackendConfig
from .errors import GazemanipError, ManifestError
from .grasp import build_grasp_set
from .intent import IntentOption, build_grasp_prompt, build_intent_prompt, predict_intent, select_grasp
from .pipeline import fixations_from_script, ground_pixel, object_pixel, run_gamma_trial, run_panel_trial
from .scene import Scenario, extract_object_cloud, load_scenario, render

CASE_KINDS = ("intent", "grasp", "end_to_end")
DIFFICULTIES = ("easy", "medium", "hard")
MAX_TRIALS_PER_CASE = 2

_CASE_SCHEMA = {
    "type": "object",
    "required": ["id", "kind", "scenario", "difficulty", "inputs", "answer"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "kind": {"enum": list(CASE_KINDS)},
        "scenario": {"type": "string", "minLength": 1},
        "difficulty": {"enum": list(DIFFICULTIES)},
        "inputs": {"type": "object"},
        "answer": {"type": "object"},
    },
}
MANIFEST_SCHEMA = {"type": "array", "minItems": 1, "items": _CASE_SCHEMA}
_VALIDATOR = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class BenchmarkCase:
    """One scored benchmark case, with its scenario path already resolved."""

    id: str
    kind: str
    scenario_path: Path
    difficulty: str
    inputs: dict
    answer: dict

    def validate_key(self) -> None:
        """Answer key must be consistent with the case kind."""
        if self.kind == "intent":
            options = self.inputs.get("options")
            if not options:
                raise ManifestError(f"case {self.id}: intent inputs need options")
            idx = self.answer.get("option_index")
            if not isinstance(idx, int) or not 0 <= idx < len(options):
                raise ManifestError(
                    f"case {self.id}: option_index {idx!r} outside 0..{len(options) - 1}")
            chosen = options[idx]
            if (chosen["action"] != self.answer.get("action")
                    or chosen["objects"] != self.answer.get("objects")):
                raise ManifestError(
                    f"case {self.id}: answer action/objects disagree with option {idx}")
        elif self.kind == "grasp":
            acceptable = self.answer.get("acceptable_labels")
            if not acceptable:
                raise ManifestError(f"case {self.id}: empty acceptable_labels")
            if self.answer.get("final_label") not in acceptable:
                raise ManifestError(
                    f"case {self.id}: final_label not among acceptable_labels")
            if "target" not in self.inputs or "intent" not in self.inputs:
                raise ManifestError(f"case {self.id}: grasp inputs need target and intent")
        else:  # end_to_end
            seeds = self.inputs.get("seeds")
            if not seeds:
                raise ManifestError(f"case {self.id}: end_to_end inputs need seeds")
            if self.inputs.get("mode", "gamma") not in ("gamma", "panel"):
                raise ManifestError(f"case {self.id}: unknown mode")


def load_manifest(path) -> list:
    """Parse and validate a manifest; resolve and load every scenario ref.

    Any problem raises ManifestError before a single case runs.
    """
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"manifest {path} does not exist")
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}")
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise ManifestError(f"manifest {path}: {e.json_path}: {e.message}")
    cases = []
    seen = set()
    for raw in doc:
        ref = (path.parent / raw["scenario"]).resolve()
        case = BenchmarkCase(raw["id"], raw["kind"], ref, raw["difficulty"],
                             raw["inputs"], raw["answer"])
        if case.id in seen:
            raise ManifestError(f"duplicate case id {case.id!r}")
        seen.add(case.id)
        if not ref.is_file():
            raise ManifestError(f"case {case.id}: scenario {raw['scenario']!r} "
                                f"does not resolve ({ref})")
        case.validate_key()
        cases.append(case)
    return cases


@dataclass
class CaseRecord:
    """Outcome of one scored trial (one seed, for end-to-end cases)."""

    case_id: str
    kind: str
    backend_id: str
    difficulty: str
    seed: int
    correct: bool
    latency_s: float
    stages: dict
    prediction: dict | None = None
    attempts: int = 1
    error: str | None = None
    started_at: str = ""
    finished_at: str = ""

    def __post_init__(self):
        # stage flags are cumulative in gamma mode; a record violating that
        # ordering indicates a scoring bug, not a model failure
        s = self.stages
        if s.get("exec_ok") and not s.get("grasp_ok"):
            raise ValueError(f"{self.case_id}: exec_ok without grasp_ok")
        if s.get("grasp_ok") and not s.get("intent_ok"):
            raise ValueError(f"{self.case_id}: grasp_ok without intent_ok")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id, "kind": self.kind,
            "backend_id": self.backend_id, "difficulty": self.difficulty,
            "seed": self.seed, "correct": self.correct,
            "latency_s": round(self.latency_s, 6), "stages": dict(self.stages),
            "prediction": self.prediction, "attempts": self.attempts,
            "error": self.error, "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        return cls(case_id=d["case_id"], kind=d["kind"],
                   backend_id=d["backend_id"], difficulty=d["difficulty"],
                   seed=d["seed"], correct=d["correct"],
                   latency_s=d["latency_s"], stages=d["stages"],
                   prediction=d.get("prediction"), attempts=d.get("attempts", 1),
                   error=d.get("error"), started_at=d.get("started_at", ""),
                   finished_at=d.get("finished_at", ""))


def _timed(fn):
    import time

    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _run_intent_once(case, scn: Scenario, backend, transport):
    camera = case.inputs.get("camera", 0)
    fixations = fixations_from_script(scn, camera, case.inputs.get("seed", 0))
    options = [IntentOption(o["action"], tuple(o["objects"]))
               for o in case.inputs["options"]]
    frame = render(scn, scn.cameras[camera] if isinstance(camera, int)
                   else scn.camera(camera)).rgb
    query = build_intent_prompt(frame, fixations, options,
                                [o.name for o in scn.objects])
    pred, latency = _timed(lambda: predict_intent(
        query, backend, scenario=scn, camera=camera, transport=transport))
    correct = pred.chosen_option_index == case.answer["option_index"]
    return pred.to_dict(), correct, latency, {"intent_ok": correct,
                                              "grasp_ok": False, "exec_ok": False}


def _run_grasp_once(case, scn: Scenario, backend, transport):
    from .intent import IntentPrediction

    target = case.inputs["target"]
    camera = case.inputs.get("camera", 0)
    doc = case.inputs["intent"]
    intent = IntentPrediction(0, doc["action"], tuple(doc["objects"]),
                              "manifest intent")
    cloud = extract_object_cloud(scn, target)
    gaze_point = ground_pixel(scn, camera, object_pixel(scn, camera, target))
    gset = build_grasp_set(cloud, gaze_point, shape_hint=scn.object(target).kind,
                           target_object_id=scn.index_of(target),
                           seed=case.inputs.get("seed", 0))
    style = case.inputs.get("style", "image_multiview")
    prompt = build_grasp_prompt(gset, scn, intent, style)
    choice, latency = _timed(lambda: select_grasp(
        prompt, backend, scenario=scn, grasp_set=gset, transport=transport))
    correct = choice.final_label in case.answer["acceptable_labels"]
    prediction = {"final_label": choice.final_label,
                  "valid_labels": sorted(choice.valid_labels)}
    return prediction, correct, latency, {"intent_ok": correct,
                                          "grasp_ok": correct, "exec_ok": False}


def run_case(case: BenchmarkCase, scn: Scenario, backend: BackendConfig,
             transport=None, backend_id: str = "") -> list:
    """Score one case; end-to-end cases yield one record per seed.

    Every trial gets up to MAX_TRIALS_PER_CASE attempts and counts as
    correct when any attempt is.
    """
    backend_id = backend_id or (backend.model or backend.kind)
    records = []
    if case.kind in ("intent", "grasp"):
        runner = _run_intent_once if case.kind == "intent" else _run_grasp_once
        started = _utc_now()
        prediction, correct, latency, stages, error = None, False, 0.0, {}, None
        attempts = 0
        for attempts in range(1, MAX_TRIALS_PER_CASE + 1):
            try:
                prediction, correct, latency, stages = runner(
                    case, scn, backend, transport)
                error = None
            except (GazemanipError, ValueError) as e:
                correct, error = False, f"{type(e).__name__}: {e}"
                stages = {"intent_ok": False, "grasp_ok": False, "exec_ok": False}
            if correct:
                break
        records.append(CaseRecord(
            case.id, case.kind, backend_id, case.difficulty,
            seed=case.inputs.get("seed", 0), correct=correct, latency_s=latency,
            stages=stages, prediction=prediction, attempts=attempts,
            error=error, started_at=started, finished_at=_utc_now()))
        return records

    mode = case.inputs.get("mode", "gamma")
    camera = case.inputs.get("camera", 0)
    for seed in case.inputs["seeds"]:
        started = _utc_now()
        outcome = None
        for attempts in range(1, MAX_TRIALS_PER_CASE + 1):
            if mode == "panel":
                outcome = run_panel_trial(scn, seed=seed)
            else:
                outcome = run_gamma_trial(scn, backend, seed=seed, camera=camera,
                                          transport=transport)
            if outcome.success:
                break
        wall = outcome.record.wall_time_s if outcome.record is not None else 0.0
        records.append(CaseRecord(
            case.id, case.kind, backend_id, case.difficulty,
            seed=seed, correct=outcome.success, latency_s=wall,
            stages={"intent_ok": outcome.intent_ok, "grasp_ok": outcome.grasp_ok,
                    "exec_ok": outcome.exec_ok},
            prediction=None if outcome.prediction is None
            else outcome.prediction.to_dict(),
            attempts=attempts, error=outcome.error,
            started_at=started, finished_at=_utc_now()))
    return records


# ---------------------------------------------------------------------------
# aggregation


def score_choice_batch(records) -> Fraction:
    """Exact accuracy of a record batch; Fraction so checks stay rational."""
    records = list(records)
    if not records:
        raise ValueError("cannot score an empty batch")
    return Fraction(sum(1 for r in records if r.correct), len(records))


@dataclass
class BenchSummary:
    backend_id: str
    rows: list = field(default_factory=list)  # kind/difficulty aggregates

    def row(self, kind: str, difficulty: str) -> dict | None:
        for r in self.rows:
            if r["kind"] == kind and r["difficulty"] == difficulty:
                return r
        return None

    def to_dict(self) -> dict:
        return {"backend_id": self.backend_id, "rows": list(self.rows)}

    def accuracy_table(self) -> list:
        """The deterministic part of the summary: everything but latency."""
        return [{k: r[k] for k in ("kind", "difficulty", "n", "n_correct",
                                   "accuracy")} for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=[
            "backend_id", "kind", "difficulty", "n", "n_correct", "accuracy",
            "mean_latency_s"])
        writer.writeheader()
        for r in self.rows:
            writer.writerow({"backend_id": self.backend_id, **r})
        return buf.getvalue()

    def to_text(self) -> str:
        header = ("kind", "difficulty", "n", "correct", "accuracy", "mean latency")
        body = [(r["kind"], r["difficulty"], str(r["n"]), str(r["n_correct"]),
                 f"{r['accuracy']:.4f}", f"{r['mean_latency_s']:.4f}s")
                for r in self.rows]
        widths = [max(len(h), *(len(row[i]) for row in body))
                  for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
                 "  ".join("-" * w for w in widths)]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths))
                  for row in body]
        return f"backend: {self.backend_id}\n" + "\n".join(lines) + "\n"


def _aggregate(records) -> dict:
    n = len(records)
    n_correct = sum(1 for r in records if r.correct)
    return {"n": n, "n_correct": n_correct, "accuracy": n_correct / n,
            "mean_latency_s": sum(r.latency_s for r in records) / n}


def summarize(records) -> BenchSummary:
    """Per-kind and per-difficulty aggregates plus the overall row.

    Per-difficulty accuracies weighted-average (by case count) to the
    per-kind accuracy, and per-kind to the overall; accuracy is kept as
    n_correct/n so the invariant is checkable in exact arithmetic.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot summarize zero records")
    summary = BenchSummary(records[0].backend_id)
    kinds = [k for k in CASE_KINDS if any(r.kind == k for r in records)]
    for kind in kinds:
        of_kind = [r for r in records if r.kind == kind]
        for diff in DIFFICULTIES:
            batch = [r for r in of_kind if r.difficulty == diff]
            if batch:
                summary.rows.append({"kind": kind, "difficulty": diff,
                                     **_aggregate(batch)})
        summary.rows.append({"kind": kind, "difficulty": "all",
                             **_aggregate(of_kind)})
    summary.rows.append({"kind": "all", "difficulty": "all",
                         **_aggregate(records)})
    return summary


# ---------------------------------------------------------------------------
# drivers


def write_records(records, path) -> Path:
    """One record per JSONL line, input order, single writer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return path


def read_records(path) -> list:
    with open(path) as f:
        return [CaseRecord.from_dict(json.loads(line))
                for line in f if line.strip()]


def run_benchmark(manifest_path, backend: BackendConfig, parallelism: int = 1,
                  record_path=None, transport=None,
                  backend_id: str = "") -> tuple:
    """Validate, run, and score a manifest; returns (summary, records).

    Cases run concurrently up to `parallelism`; records keep manifest
    order regardless, so serial and parallel runs agree.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cases = load_manifest(manifest_path)
    scenarios = {c.id: load_scenario(c.scenario_path) for c in cases}

    def _one(case):
        return run_case(case, scenarios[case.id], backend,
                        transport=transport, backend_id=backend_id)

    if parallelism == 1:
        batches = [_one(c) for c in cases]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_one, c) for c in cases]
            batches = [f.result() for f in futures]
    records = [rec for batch in batches for rec in batch]
    summary = summarize(records)
    if record_path is not None:
        write_records(records, record_path)
    return summary, records


def replay_records(path) -> tuple:
    """Re-aggregate stored records; no case is re-run."""
    records = read_records(path)
    if not records:
        raise ManifestError(f"record file {path} holds no records")
    return summarize(records), records


@dataclass
class EndToEndResult:
    scenario_id: str
    mode: str
    seed: int
    attempts: int
    outcome: object

    @property
    def success(self) -> bool:
        return self.outcome.success


def run_end_to_end(scenarios, mode: str = "gamma",
                   backend: BackendConfig | None = None, seeds=(0,),
                   camera=0, on_event=None) -> list:
    """Scripted trials over full scenarios with the two-trial retry rule."""
    backend = backend or BackendConfig(kind="oracle")
    results = []
    for scn in scenarios:
        for seed in seeds:
            outcome = None
            for attempts in range(1, MAX_TRIALS_PER_CASE + 1):
                if mode == "panel":
                    outcome = run_panel_trial(scn, seed=seed)
                else:
                    outcome = run_gamma_trial(scn, backend, seed=seed,
                                              camera=camera, on_event=on_event)
                if outcome.success:
                    break
            results.append(EndToEndResult(scn.name, mode, seed, attempts, outcome))
    return results


def write_trial_records(results, path) -> Path:
    """JSONL of execution TrialRecords from end-to-end results, for plots."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for res in results:
            rec = res.outcome.record
            doc = rec.to_dict() if rec is not None else {
                "scenario_id": res.scenario_id, "mode": res.mode,
                "success": False, "failure_reason": res.outcome.error,
                "wall_time_s": 0.0, "sim_time_s": 0.0, "events": []}
            doc["seed"] = res.seed
            doc["attempts"] = res.attempts
            f.write(json.dumps(doc, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# plots


def _segment_path(event: dict) -> list:
    if "path" in event:
        return [tuple(p) for p in event["path"]]
    return [tuple(event["tcp_start"]), tuple(event["tcp_end"])]


def trajectory_points(record: dict) -> list:
    """(label, xyz) vertices of the TCP path from a trial's event stream.

    Gamma trials contribute motion segments; panel trials contribute one
    polyline piece per dwell run, labelled by the button driving it.
    """
    points = []
    for ev in record.get("events", []):
        if ev.get("kind") == "motion":
            for p in _segment_path(ev):
                points.append((ev["segment"], p))
        elif ev.get("kind") == "panel_run":
            label = ev["button"] if ev["button"] is not None else "idle"
            points.append((label, tuple(ev["tcp_start"])))
            points.append((label, tuple(ev["tcp_end"])))
    return points


def trajectory_length(record: dict) -> float:
    """Sum of piecewise path lengths over the trial's event stream."""
    total = 0.0
    for ev in record.get("events", []):
        if ev.get("kind") == "motion":
            path = _segment_path(ev)
        elif ev.get("kind") == "panel_run":
            path = [ev["tcp_start"], ev["tcp_end"]]
        else:
            continue
        for a, b in zip(path, path[1:]):
            total += math.dist(a, b)
    return total


def emit_plots(records, out_dir, render: bool = False) -> dict:
    """Per-mode time/success CSVs and TCP trajectory data from trial records.

    `records` is a path to a trial-record JSONL or a list of record dicts.
    CSV outputs are always written; PNG charts only when `render` is set
    and matplotlib is importable. Returns {artifact name: path}.
    """
    if isinstance(records, (str, Path)):
        with open(records) as f:
            records = [json.loads(line) for line in f if line.strip()]
    # case records (intent/grasp scoring) carry no trajectories; drop them
    skipped = sum(1 for r in records if "events" not in r)
    records = [r for r in records if "events" in r]
    if not records:
        raise ValueError("emit_plots needs at least one trial record "
                         "(bench case records hold no trajectories)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    modes = sorted({r["mode"] for r in records})
    mode_csv = out_dir / "mode_summary.csv"
    with open(mode_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "n", "n_success", "success_rate",
                         "mean_sim_time_s", "mean_wall_time_s"])
        for mode in modes:
            of_mode = [r for r in records if r["mode"] == mode]
            n = len(of_mode)
            wins = sum(1 for r in of_mode if r["success"])
            writer.writerow([
                mode, n, wins, f"{wins / n:.6f}",
                f"{sum(r['sim_time_s'] for r in of_mode) / n:.6f}",
                f"{sum(r['wall_time_s'] for r in of_mode) / n:.6f}"])
    written["mode_summary"] = mode_csv

    traj_csv = out_dir / "trajectories.csv"
    with open(traj_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["record", "scenario_id", "mode", "label", "x", "y", "z"])
        for i, rec in enumerate(records):
            for label, (x, y, z) in trajectory_points(rec):
                writer.writerow([i, rec["scenario_id"], rec["mode"], label,
                                 f"{x:.6f}", f"{y:.6f}", f"{z:.6f}"])
    written["trajectories"] = traj_csv

    meta = {"modes_present": modes, "n_records": len(records), "notes": []}
    for absent in ("gamma", "panel"):
        if absent not in modes:
            meta["notes"].append(f"no {absent} records; {absent} columns absent")
    if skipped:
        meta["notes"].append(f"skipped {skipped} case records without trajectories")
    meta_path = out_dir / "metadata.json"
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    written["metadata"] = meta_path

    if render:
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            meta["notes"].append("matplotlib unavailable; charts skipped")
            with open(meta_path, "w") as f:
                json.dump(meta, f, indent=2, sort_keys=True)
                f.write("\n")
            return written
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        times = [sum(r["sim_time_s"] for r in records if r["mode"] == m)
                 / max(1, sum(1 for r in records if r["mode"] == m))
                 for m in modes]
        rates = [sum(1 for r in records if r["mode"] == m and r["success"])
                 / max(1, sum(1 for r in records if r["mode"] == m))
                 for m in modes]
        axes[0].bar(modes, times)
        axes[0].set_ylabel("mean sim time (s)")
        axes[1].bar(modes, rates)
        axes[1].set_ylabel("success rate")
        axes[1].set_ylim(0, 1.05)
        fig.tight_layout()
        bars_png = out_dir / "mode_bars.png"
        fig.savefig(bars_png)
        plt.close(fig)
        written["mode_bars"] = bars_png

        fig = plt.figure(figsize=(6, 5))
        ax = fig.add_subplot(projection="3d")
        for i, rec in enumerate(records):
            pts = trajectory_points(rec)
            if not pts:
                continue
            xs = [p[1][0] for p in pts]
            ys = [p[1][1] for p in pts]
            zs = [p[1][2] for p in pts]
            ax.plot(xs, ys, zs, label=f"{rec['scenario_id']}#{i}")
        ax.set_xlabel("x"), ax.set_ylabel("y"), ax.set_zlabel("z")
        traj_png = out_dir / "trajectories_3d.png"
        fig.savefig(traj_png)
        plt.close(fig)
        written["trajectories_3d"] = traj_png
    return written
