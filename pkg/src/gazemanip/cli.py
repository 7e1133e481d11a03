"""Command-line entry points.

Exit codes follow the service convention: 0 on success, 1 when a trial or
benchmark case fails, 2 on usage errors (click's default for bad
invocations).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .backends import BackendConfig
from .config import AppConfig, load_config
from .errors import GazemanipError
from .gaze import reproject_gaze_full
from .geometry import CameraIntrinsics, DepthImage, Pixel, RigidTransform
from .grasp import build_grasp_set
from .pipeline import run_gamma_trial, run_panel_trial
from .scene import extract_object_cloud, load_scenario, render
from . import scenarios as bundled

TASK_FAILURE = 1


def _load_world(ref: str):
    """Scenario by bundled name or by JSON path."""
    if ref in bundled.SCENARIO_NAMES:
        return bundled.build(ref)
    path = Path(ref)
    if not path.exists():
        raise click.UsageError(
            f"{ref!r} is neither a bundled scenario nor an existing file")
    return load_scenario(path)


def _backend_config(kind: str, cfg: AppConfig) -> BackendConfig:
    if kind == "oracle":
        return BackendConfig("oracle")
    if cfg.backend.kind != "remote":
        raise click.UsageError(
            "--backend remote needs a config file with a remote backend section")
    return cfg.backend


@click.group()
def main():
    """Gaze-assisted manipulation pipeline tools."""


# -- serve ---------------------------------------------------------------------


@main.command()
@click.option("--port", type=int, default=None, help="Override the configured port.")
@click.option("--scenarios", "scenario_dir",
              type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of scenario JSON files to add.")
@click.option("--backend", type=click.Choice(["oracle", "remote"]),
              default="oracle", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="AppConfig JSON file.")
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(port, scenario_dir, backend, config_path, host):
    """Run the HTTP gateway."""
    import uvicorn

    from .gateway import create_app

    cfg = load_config(config_path)
    cfg.backend = _backend_config(backend, cfg)
    if port is not None:
        cfg.port = port
    app = create_app(cfg, scenario_dir=scenario_dir)
    uvicorn.run(app, host=host, port=cfg.port)


# -- run-scenario -----------------------------------------------------------------


@main.command("run-scenario")
@click.argument("scenario")
@click.option("--mode", type=click.Choice(["gamma", "panel"]), default="gamma",
              show_default=True)
@click.option("--gaze", "gaze_source", default="scripted", show_default=True,
              help="'scripted' replays the scenario script; otherwise a JSON "
                   "trace file of [t_s, u, v] samples.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", type=click.Choice(["oracle", "remote"]),
              default="oracle", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Where to write the trial record JSON (default: stdout only).")
def run_scenario(scenario, mode, gaze_source, seed, backend, config_path, out_path):
    """Run one trial and write its record."""
    scn = _load_world(scenario)
    cfg = load_config(config_path)
    samples = None
    if gaze_source != "scripted":
        trace_path = Path(gaze_source)
        if not trace_path.exists():
            raise click.UsageError(f"gaze trace {gaze_source!r} does not exist")
        if mode == "panel":
            raise click.UsageError("panel mode replays the scenario's button script")
        raw = json.loads(trace_path.read_text())
        samples = [(float(t), float(u), float(v)) for t, u, v in raw]
    try:
        if mode == "gamma":
            outcome = run_gamma_trial(scn, _backend_config(backend, cfg),
                                      seed=seed, gaze_samples=samples)
        else:
            outcome = run_panel_trial(scn, seed=seed, layout=cfg.panel)
    except (GazemanipError, ValueError) as e:
        raise click.ClickException(str(e))
    doc = outcome.to_dict()
    text = json.dumps(doc, indent=2)
    if out_path is not None:
        Path(out_path).write_text(text + "\n")
        click.echo(f"wrote {out_path}")
    click.echo(f"{scn.name}: {'success' if outcome.success else 'failure'}"
               + (f" ({outcome.error})" if outcome.error else ""))
    if not outcome.success:
        sys.exit(TASK_FAILURE)


# -- scene -----------------------------------------------------------------------


@main.group()
def scene():
    """Scenario file utilities."""


@scene.command("render")
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def scene_render(scenario, camera, out_dir):
    """Render one camera to rgb/depth/id PNGs."""
    import cv2

    scn = load_scenario(scenario)
    if not 0 <= camera < len(scn.cameras):
        raise click.UsageError(
            f"camera {camera} out of range (scenario has {len(scn.cameras)})")
    res = render(scn, scn.cameras[camera])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # OpenCV writes BGR; ids stay 16-bit to survive >255 objects
    cv2.imwrite(str(out / "rgb.png"), res.rgb[:, :, ::-1])
    res.depth.save_png(out / "depth.png")
    cv2.imwrite(str(out / "ids.png"), res.ids.astype(np.uint16))
    meta = {"scenario": scn.name, "camera": scn.cameras[camera].to_dict(),
            "objects": [o.name for o in scn.objects]}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    click.echo(f"wrote rgb.png, depth.png, ids.png, meta.json to {out_dir}")


# -- bench ------------------------------------------------------------------------


@main.group()
def bench():
    """Benchmark harness commands."""


@bench.command("run")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", type=click.Choice(["oracle", "remote"]),
              default="oracle", show_default=True)
@click.option("--record", "record_dir", type=click.Path(file_okay=False),
              default=None, help="Directory for records.jsonl and summary files.")
@click.option("--parallel", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
def bench_run(manifest, backend, record_dir, parallel, config_path):
    """Run every case in a manifest and print the summary table."""
    from .bench import run_benchmark

    cfg = load_config(config_path)
    bcfg = _backend_config(backend, cfg)
    record_path = None
    if record_dir is not None:
        out = Path(record_dir)
        out.mkdir(parents=True, exist_ok=True)
        record_path = out / "records.jsonl"
    try:
        summary, records = run_benchmark(manifest, bcfg, parallelism=parallel,
                                         record_path=record_path,
                                         backend_id=backend)
    except (GazemanipError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(summary.to_text())
    if record_dir is not None:
        out = Path(record_dir)
        (out / "summary.csv").write_text(summary.to_csv())
        (out / "summary.txt").write_text(summary.to_text() + "\n")
        click.echo(f"wrote {record_path}, summary.csv, summary.txt")
    if any(not r.correct for r in records):
        sys.exit(TASK_FAILURE)


@bench.command("replay")
@click.argument("records", type=click.Path(exists=True, dir_okay=False))
def bench_replay(records):
    """Re-score stored records without re-running any case."""
    from .bench import replay_records

    try:
        summary, _ = replay_records(records)
    except GazemanipError as e:
        raise click.ClickException(str(e))
    click.echo(summary.to_text())


@bench.command("plots")
@click.argument("records", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--render/--no-render", default=False, show_default=True,
              help="Also rasterize PNG charts (needs matplotlib).")
def bench_plots(records, out_dir, render):
    """Emit per-mode time/success tables and TCP trajectory traces."""
    from .bench import emit_plots

    try:
        written = emit_plots(records, out_dir, render=render)
    except (GazemanipError, ValueError) as e:
        raise click.ClickException(str(e))
    for name, path in sorted(written.items()):
        click.echo(f"{name}: {path}")


# -- reproject ----------------------------------------------------------------------


def _parse_gaze(text: str) -> Pixel:
    try:
        u, v = (float(p) for p in text.split(","))
    except ValueError:
        raise click.UsageError(f"--gaze expects 'u,v', got {text!r}")
    return Pixel(u, v)


@main.command()
@click.argument("depth_png", type=click.Path(exists=True, dir_okay=False))
@click.argument("calib_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--gaze", required=True, help="Gaze pixel as 'u,v'.")
@click.option("--step", type=int, default=4, show_default=True)
def reproject(depth_png, calib_json, gaze, step):
    """Ground a gaze pixel through a depth image (direct grid-scan access).

    The calibration file holds `depth_intrinsics`, optional `rgb_intrinsics`
    (defaults to the depth ones), and an optional `t_depth_to_rgb` rigid
    transform (defaults to identity).
    """
    import cv2

    data = cv2.imread(depth_png, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise click.ClickException(f"could not read depth image {depth_png!r}")
    depth = DepthImage(data.shape[1], data.shape[0], data)
    calib = json.loads(Path(calib_json).read_text())
    try:
        k_d = CameraIntrinsics.from_dict(calib["depth_intrinsics"])
        k_r = (CameraIntrinsics.from_dict(calib["rgb_intrinsics"])
               if "rgb_intrinsics" in calib else k_d)
        t = calib.get("t_depth_to_rgb")
        t_d_to_r = (RigidTransform(np.asarray(t["rotation"]),
                                   np.asarray(t["translation"]))
                    if t else RigidTransform.identity())
    except (KeyError, TypeError, ValueError) as e:
        raise click.UsageError(f"bad calibration file: {e}")
    try:
        res = reproject_gaze_full(depth, k_d, t_d_to_r, k_r,
                                  _parse_gaze(gaze), step=step)
    except (GazemanipError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(json.dumps({
        "point_m": [round(float(x), 9) for x in res.point],
        "depth_pixel": [int(res.depth_pixel.u), int(res.depth_pixel.v)],
        "rgb_projection": [round(float(res.projected.u), 3),
                           round(float(res.projected.v), 3)],
        "distance_px": round(res.distance_px, 3),
    }, indent=2))


# -- grasps -------------------------------------------------------------------------


@main.command()
@click.argument("scenario")
@click.argument("object_name")
@click.option("--seed", type=int, default=0, show_default=True)
def grasps(scenario, object_name, seed):
    """Print the grasp candidate set for one object as JSON."""
    scn = _load_world(scenario)
    try:
        obj = scn.object(object_name)
        cloud = extract_object_cloud(scn, object_name)
        gaze_point = obj.pose.translation
        gset = build_grasp_set(cloud, gaze_point, shape_hint=obj.kind,
                               target_object_id=scn.index_of(object_name),
                               seed=seed)
    except (GazemanipError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(json.dumps(gset.to_dict(), indent=2))


# -- bundle -------------------------------------------------------------------------


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
def bundle(out_dir):
    """Write the bundled scenario corpus and benchmark manifests."""
    root = bundled.write_bundle(out_dir)
    n = sum(1 for _ in Path(root).rglob("*.json"))
    click.echo(f"wrote {n} files under {root}")


if __name__ == "__main__":
    main()
