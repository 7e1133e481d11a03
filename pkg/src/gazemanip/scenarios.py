"""Bundled scenario corpus: scripted scenes, manifests, and answer keys.

Three case families ship with the package: intent disambiguation (10
cases), grasp screening (15 cases over three scene types), and scripted
end-to-end tasks (4 cases), plus probe scenes for specific behaviors
(generator fallback, panel-mode reach, plan preconditions). Intent answer
keys are authored and cross-checked against the rule table at write time;
grasp keys are computed by the same geometric screening the oracle backend
runs, which pins the bundle to the shipped geometry.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .scene import Camera, Scenario, SceneObject, camera_look_at, save_scenario

IMG_W, IMG_H = 320, 240
FOCAL = 280.0


def standard_cameras() -> list:
    k = CameraIntrinsics(FOCAL, FOCAL, IMG_W / 2.0, IMG_H / 2.0, IMG_W, IMG_H)
    look = (0.45, 0.0, 0.05)
    return [Camera("cam0", k, camera_look_at((0.90, -0.55, 0.55), look)),
            Camera("cam1", k, camera_look_at((0.15, 0.60, 0.50), look))]


def _at(x: float, y: float, z: float) -> RigidTransform:
    return RigidTransform(np.eye(3), np.array([x, y, z]))


def _cube(xy=(0.50, -0.08), name="cube", side=0.04, color=(205, 65, 55), **kw):
    return SceneObject(name, "box", (side, side, side),
                       _at(xy[0], xy[1], side / 2), color=color,
                       graspable=True, **kw)


def _tray(xy=(0.55, 0.30), name="tray"):
    return SceneObject(name, "box", (0.20, 0.15, 0.02),
                       _at(xy[0], xy[1], 0.01), color=(150, 152, 158),
                       flat_surface=True)


def _bin(xy=(0.30, 0.20), name="bin", open=True, openable=False):
    return SceneObject(name, "box", (0.12, 0.12, 0.08),
                       _at(xy[0], xy[1], 0.04), color=(95, 115, 200),
                       container=True, open=open, openable=openable,
                       wall_thickness=0.008)


def _kettle(xy=(0.45, -0.22)):
    return SceneObject("kettle", "cylinder", (0.035, 0.14),
                       _at(xy[0], xy[1], 0.07), color=(70, 70, 82),
                       graspable=True, pourable=True)


def _mug(xy=(0.42, 0.20), name="mug"):
    return SceneObject(name, "cylinder", (0.045, 0.09),
                       _at(xy[0], xy[1], 0.045), color=(225, 225, 232),
                       graspable=True, container=True, open=True,
                       wall_thickness=0.006)


def _bottle(xy=(0.60, 0.10), name="bottle"):
    return SceneObject(name, "cylinder", (0.030, 0.12),
                       _at(xy[0], xy[1], 0.06), color=(80, 165, 95),
                       graspable=True)


def _can(xy=(0.55, -0.12), name="can"):
    return SceneObject(name, "cylinder", (0.025, 0.10),
                       _at(xy[0], xy[1], 0.05), color=(215, 185, 70),
                       graspable=True)


def _brick(xy=(0.36, -0.24), name="brick"):
    return SceneObject(name, "box", (0.05, 0.05, 0.05),
                       _at(xy[0], xy[1], 0.025), color=(175, 125, 70),
                       graspable=True)


def _microwave(xy=(0.40, 0.25), open=False):
    return SceneObject("microwave", "box", (0.24, 0.30, 0.20),
                       _at(xy[0], xy[1], 0.10), color=(55, 55, 62),
                       container=True, openable=True, open=open,
                       opening="front", wall_thickness=0.01)


def _lamp(xy=(0.62, -0.18)):
    return SceneObject("lamp", "cylinder", (0.030, 0.18),
                       _at(xy[0], xy[1], 0.09), color=(235, 215, 130))


def _scene(name, objects, difficulty="easy", gaze_script=None,
           expected_intent=None, task=None, cameras=None) -> Scenario:
    return Scenario(name, objects, cameras or standard_cameras(),
                    difficulty=difficulty, gaze_script=gaze_script,
                    expected_intent=expected_intent, task=task or {})


# ---------------------------------------------------------------------------
# intent scenes


def intent_open_microwave() -> Scenario:
    return _scene("intent-open-microwave",
                  [_microwave(open=False), _mug((0.48, -0.20)), _cube((0.62, -0.02))],
                  gaze_script=[("microwave", 2.5)],
                  expected_intent={"action": "open", "objects": ["microwave"]})


def intent_close_microwave() -> Scenario:
    return _scene("intent-close-microwave",
                  [_microwave(open=True), _mug((0.48, -0.20)), _cube((0.62, -0.02))],
                  gaze_script=[("microwave", 2.5)],
                  expected_intent={"action": "close", "objects": ["microwave"]})


def intent_pour_kettle() -> Scenario:
    return _scene("intent-pour-kettle",
                  [_kettle(), _mug(), _cube((0.62, -0.02))],
                  gaze_script=[("kettle", 2.5), ("mug", 2.5)],
                  expected_intent={"action": "pour", "objects": ["kettle", "mug"]})


def intent_cube_tray() -> Scenario:
    return _scene("intent-cube-tray",
                  [_cube((0.48, -0.10)), _tray(), _can((0.64, 0.04))],
                  gaze_script=[("cube", 2.5), ("tray", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "tray"]})


def intent_bin_clutter() -> Scenario:
    return _scene("intent-bin-clutter",
                  [_cube((0.52, -0.06)), _bin((0.30, 0.22)), _tray((0.58, 0.32)),
                   _brick((0.38, -0.26)), _can((0.66, 0.06))],
                  difficulty="medium",
                  gaze_script=[("cube", 2.5), ("bin", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "bin"]})


def intent_two_containers() -> Scenario:
    bowl = SceneObject("bowl", "cylinder", (0.06, 0.05),
                       _at(0.58, 0.26, 0.025), color=(240, 238, 230),
                       container=True, open=True, wall_thickness=0.006)
    return _scene("intent-two-containers",
                  [_kettle((0.44, -0.20)), _mug((0.38, 0.16)), bowl],
                  difficulty="medium",
                  gaze_script=[("kettle", 2.5), ("bowl", 2.5)],
                  expected_intent={"action": "pour", "objects": ["kettle", "bowl"]})


def intent_twin_blocks() -> Scenario:
    a = _cube((0.42, -0.14), name="block_a", color=(205, 65, 55))
    b = _cube((0.60, -0.02), name="block_b", color=(60, 120, 210))
    return _scene("intent-twin-blocks", [a, b, _tray((0.52, 0.30))],
                  difficulty="medium",
                  gaze_script=[("block_b", 2.5), ("tray", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["block_b", "tray"]})


def intent_closed_bin() -> Scenario:
    return _scene("intent-closed-bin",
                  [_cube((0.54, -0.10)), _bin((0.30, 0.22), open=False, openable=True),
                   _tray((0.60, 0.30))],
                  difficulty="medium",
                  gaze_script=[("cube", 2.5), ("bin", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "bin"]})


def intent_sealed_jar() -> Scenario:
    jar = SceneObject("jar", "cylinder", (0.035, 0.11),
                      _at(0.52, 0.10, 0.055), color=(205, 175, 140),
                      graspable=True, container=True, open=False,
                      openable=False, wall_thickness=0.004)
    return _scene("intent-sealed-jar",
                  [jar, _tray((0.40, -0.28)), _mug((0.64, 0.24)), _lamp((0.66, -0.12))],
                  difficulty="hard",
                  gaze_script=[("jar", 2.5), ("tray", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["jar", "tray"]})


def intent_glance_decoy() -> Scenario:
    return _scene("intent-glance-decoy",
                  [_cube((0.50, -0.12)), _lamp((0.64, -0.02)), _bin((0.30, 0.22))],
                  difficulty="hard",
                  gaze_script=[("cube", 2.2), ("lamp", 2.2), ("bin", 2.2)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "bin"]})


# intent case id -> (builder, option menu, correct option index)
_INTENT_CASES = (
    ("intent-open-microwave", intent_open_microwave,
     [("open", ("microwave",)), ("pick_and_place", ("cube", "microwave")),
      ("pick_and_place", ("cube", "mug")), ("hand_over", ("cube",))], 0),
    ("intent-close-microwave", intent_close_microwave,
     [("pick_and_place", ("cube", "microwave")), ("close", ("microwave",)),
      ("hand_over", ("cube",))], 1),
    ("intent-pour-kettle", intent_pour_kettle,
     [("pick_and_place", ("kettle", "mug")), ("pour", ("kettle", "mug")),
      ("pick_and_place", ("cube", "mug")), ("hand_over", ("kettle",))], 1),
    ("intent-cube-tray", intent_cube_tray,
     [("pick_and_place", ("cube", "tray")), ("hand_over", ("cube",)),
      ("pick_and_place", ("can", "tray"))], 0),
    ("intent-bin-clutter", intent_bin_clutter,
     [("pick_and_place", ("cube", "tray")), ("pick_and_place", ("cube", "bin")),
      ("pick_and_place", ("brick", "bin")), ("hand_over", ("cube",))], 1),
    ("intent-two-containers", intent_two_containers,
     [("pour", ("kettle", "mug")), ("pour", ("kettle", "bowl")),
      ("pick_and_place", ("kettle", "bowl"))], 1),
    ("intent-twin-blocks", intent_twin_blocks,
     [("pick_and_place", ("block_a", "tray")), ("pick_and_place", ("block_b", "tray")),
      ("hand_over", ("block_b",))], 1),
    ("intent-closed-bin", intent_closed_bin,
     [("open", ("bin",)), ("pick_and_place", ("cube", "bin")),
      ("pick_and_place", ("cube", "tray"))], 1),
    ("intent-sealed-jar", intent_sealed_jar,
     [("open", ("jar",)), ("pour", ("jar", "mug")),
      ("pick_and_place", ("jar", "tray")), ("hand_over", ("jar",))], 2),
    ("intent-glance-decoy", intent_glance_decoy,
     [("press", ("lamp",)), ("pick_and_place", ("cube", "bin")),
      ("hand_over", ("cube",))], 1),
)


# ---------------------------------------------------------------------------
# grasp scenes: three families x five seeded placement variations


def _jitter(rng, scale=0.02):
    return rng.uniform(-scale, scale, size=2)


def grasp_multi(variation: int) -> Scenario:
    rng = np.random.default_rng(100 + variation)
    bx, by = np.array([0.52, -0.06]) + _jitter(rng)
    cx, cy = np.array([0.64, 0.10]) + _jitter(rng, 0.015)
    kx, ky = np.array([0.38, -0.24]) + _jitter(rng, 0.015)
    return _scene(f"grasp-multi-{variation}",
                  [_bottle((bx, by)), _cube((cx, cy)), _brick((kx, ky)),
                   _tray((0.55, 0.30))],
                  task={"grasp_target": "bottle",
                        "intent": {"action": "pick_and_place",
                                   "objects": ["bottle", "tray"]}})


# wall-adjacent drop cell: 27 mm inside the +y wall, so a vertical-family
# gripper (pad or closing extent >= 25 mm about the cell) overlaps the wall
# while the can itself (r 25 mm) still fits
_BASKET_DIMS = (0.27, 0.25, 0.12)
_BASKET_WALL = 0.008
_CELL_INSET = 0.027


def _basket(xy, name="basket"):
    return SceneObject(name, "box", _BASKET_DIMS, _at(xy[0], xy[1], 0.06),
                       color=(120, 88, 55), container=True, open=True,
                       wall_thickness=_BASKET_WALL)


def _basket_cell(xy) -> tuple:
    return (float(xy[0]),
            float(xy[1] + _BASKET_DIMS[1] / 2 - _BASKET_WALL - _CELL_INSET))


def grasp_basket(variation: int) -> Scenario:
    rng = np.random.default_rng(200 + variation)
    gx, gy = np.array([0.55, -0.12]) + _jitter(rng)
    bx, by = np.array([0.32, 0.18]) + _jitter(rng, 0.015)
    return _scene(f"grasp-basket-{variation}",
                  [_can((gx, gy)), _basket((bx, by))],
                  difficulty="medium",
                  task={"grasp_target": "can",
                        "place_xy": list(_basket_cell((bx, by))),
                        "intent": {"action": "pick_and_place",
                                   "objects": ["can", "basket"]}})


def _shelf(xy, name="shelf"):
    return SceneObject(name, "box", (0.12, 0.12, 0.02),
                       _at(xy[0], xy[1], 0.35), color=(125, 95, 70))


def grasp_overhead(variation: int) -> Scenario:
    rng = np.random.default_rng(300 + variation)
    gx, gy = np.array([0.60, 0.10]) + _jitter(rng, 0.015)
    return _scene(f"grasp-overhead-{variation}",
                  [_bottle((gx, gy)), _shelf((gx, gy)), _tray((0.40, -0.25))],
                  difficulty="hard",
                  task={"grasp_target": "bottle",
                        "intent": {"action": "pick_and_place",
                                   "objects": ["bottle", "tray"]}})


_GRASP_FAMILIES = (("multi", grasp_multi), ("basket", grasp_basket),
                   ("overhead", grasp_overhead))


# ---------------------------------------------------------------------------
# end-to-end scenes


def e2e_pour() -> Scenario:
    return _scene("e2e-pour", [_kettle((0.45, -0.22)), _mug((0.42, 0.20))],
                  gaze_script=[("kettle", 2.5), ("mug", 2.5)],
                  expected_intent={"action": "pour", "objects": ["kettle", "mug"]})


def e2e_multi() -> Scenario:
    return _scene("e2e-multi",
                  [_cube((0.50, -0.08)), _can((0.62, 0.02)), _brick((0.36, -0.24)),
                   _tray((0.55, 0.30))],
                  difficulty="medium",
                  gaze_script=[("cube", 2.5), ("tray", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "tray"]})


def e2e_basket() -> Scenario:
    basket_xy = (0.32, 0.18)
    return _scene("e2e-basket", [_can((0.55, -0.12)), _basket(basket_xy)],
                  difficulty="hard",
                  gaze_script=[("can", 2.5), ("basket", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["can", "basket"]},
                  task={"place_xy": list(_basket_cell(basket_xy))})


def e2e_overhead() -> Scenario:
    bottle_xy = (0.60, 0.10)
    return _scene("e2e-overhead",
                  [_bottle(bottle_xy), _shelf(bottle_xy), _tray((0.40, -0.25))],
                  difficulty="hard",
                  gaze_script=[("bottle", 2.5), ("tray", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["bottle", "tray"]})


_E2E_CASES = (("e2e-pour", e2e_pour, "easy"), ("e2e-multi", e2e_multi, "medium"),
              ("e2e-basket", e2e_basket, "hard"), ("e2e-overhead", e2e_overhead, "hard"))


# ---------------------------------------------------------------------------
# probe scenes


def probe_fallback() -> Scenario:
    """A mostly-occluded sphere: one camera sees only a thin top cap, the
    fitted center drifts upward, and both fingers close on air in every
    rotation view, forcing the gaze-nearest fallback."""
    ball = SceneObject("ball", "sphere", (0.035,), _at(0.50, 0.10, 0.035),
                       color=(210, 80, 60), graspable=True)
    screen = SceneObject("screen", "box", (0.30, 0.02, 0.138),
                         _at(0.55, 0.0, 0.069), color=(90, 90, 96))
    cams = standard_cameras()[:1]
    return _scene("probe-fallback", [ball, screen, _tray((0.55, 0.32))],
                  difficulty="hard", cameras=cams,
                  task={"grasp_target": "ball",
                        "intent": {"action": "pick_and_place",
                                   "objects": ["ball", "tray"]}})


def panel_reach() -> Scenario:
    cube = SceneObject("cube", "box", (0.03, 0.03, 0.03), _at(0.47, 0.0, 0.015),
                       color=(205, 65, 55), graspable=True)
    return _scene("panel-reach", [cube, _tray((0.55, 0.32))],
                  task={"panel_tcp": [0.35, 0.0, 0.025],
                        "panel_target": "cube",
                        "panel_script": [["+x", 2.0], ["close_gripper", 0.5]]})


def plan_microwave() -> Scenario:
    return _scene("plan-microwave",
                  [_cube((0.55, -0.15)), _microwave((0.40, 0.25), open=False)],
                  gaze_script=[("cube", 2.5), ("microwave", 2.5)],
                  expected_intent={"action": "pick_and_place",
                                   "objects": ["cube", "microwave"]})


def _builders() -> dict:
    out = {}
    for cid, fn, *_ in _INTENT_CASES:
        out[cid] = fn
    for fam, fn in _GRASP_FAMILIES:
        for k in range(5):
            out[f"grasp-{fam}-{k}"] = (lambda fn=fn, k=k: fn(k))
    for cid, fn, _ in _E2E_CASES:
        out[cid] = fn
    for fn in (probe_fallback, panel_reach, plan_microwave):
        out[fn().name] = fn
    return out


BUILDERS = _builders()
SCENARIO_NAMES = tuple(BUILDERS)


def build(name: str) -> Scenario:
    if name not in BUILDERS:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}")
    return BUILDERS[name]()


def vocabulary() -> tuple:
    names = set()
    for name in SCENARIO_NAMES:
        names.update(o.name for o in build(name).objects)
    return tuple(sorted(names))


# ---------------------------------------------------------------------------
# bundle writing


def bundle_dir() -> Path:
    return Path(__file__).resolve().parent / "data" / "bundle"


def _intent_manifest() -> list:
    cases = []
    for cid, _fn, options, answer_idx in _INTENT_CASES:
        scn = build(cid)
        action, objects = options[answer_idx]
        cases.append({
            "id": cid,
            "kind": "intent",
            "scenario": f"../scenarios/{cid}.json",
            "difficulty": scn.difficulty,
            "inputs": {"seed": 0, "camera": 0,
                       "options": [{"action": a, "objects": list(o)}
                                   for a, o in options]},
            "answer": {"option_index": answer_idx, "action": action,
                       "objects": list(objects)},
        })
    return cases


def _grasp_manifest() -> list:
    from .intent import IntentPrediction, oracle_select_grasp
    from .pipeline import ground_pixel, object_pixel
    from .grasp import build_grasp_set
    from .scene import extract_object_cloud

    cases = []
    for fam, _fn in _GRASP_FAMILIES:
        for k in range(5):
            cid = f"grasp-{fam}-{k}"
            scn = build(cid)
            target = scn.task["grasp_target"]
            intent_doc = scn.task["intent"]
            intent = IntentPrediction(0, intent_doc["action"],
                                      tuple(intent_doc["objects"]), "authored key")
            cloud = extract_object_cloud(scn, target)
            gaze_point = ground_pixel(scn, 0, object_pixel(scn, 0, target))
            # Basket cells sit a fixed gripper-width from the wall, so those
            # cases pin the sampler phase; the scene jitter still varies.
            seed = 0 if fam == "basket" else k
            gset = build_grasp_set(cloud, gaze_point,
                                   shape_hint=scn.object(target).kind,
                                   target_object_id=scn.index_of(target), seed=seed)
            ans = oracle_select_grasp(scn, gset, intent)
            excluded = sorted(set(c.label for c in gset.candidates)
                              - set(ans.valid_labels))
            if fam in ("basket", "overhead"):
                top_down_out = [lbl for lbl in excluded
                                if gset.by_label(lbl).rotation_view == 180.0]
                if not top_down_out:
                    raise ValueError(
                        f"{cid}: expected the screening to exclude a top-down "
                        f"candidate, but excluded={excluded}")
            cases.append({
                "id": cid,
                "kind": "grasp",
                "scenario": f"../scenarios/{cid}.json",
                "difficulty": scn.difficulty,
                "inputs": {"seed": seed, "camera": 0, "target": target,
                           "intent": intent_doc},
                "answer": {"acceptable_labels": sorted(ans.valid_labels),
                           "final_label": ans.final_label,
                           "excluded_labels": excluded,
                           "fallback_used": gset.fallback_used},
            })
    return cases


def _e2e_manifest() -> list:
    cases = []
    for cid, _fn, difficulty in _E2E_CASES:
        cases.append({
            "id": cid,
            "kind": "end_to_end",
            "scenario": f"../scenarios/{cid}.json",
            "difficulty": difficulty,
            "inputs": {"mode": "gamma", "camera": 0,
                       "seeds": list(range(10))},
            "answer": {"goal": "success"},
        })
    return cases


def _check_intent_keys() -> None:
    """Authored option indices must agree with the rule-table oracle."""
    from .backends import BackendConfig
    from .intent import IntentOption, build_intent_prompt, predict_intent
    from .pipeline import fixations_from_script
    from .scene import render

    oracle = BackendConfig("oracle")
    for cid, _fn, options, answer_idx in _INTENT_CASES:
        scn = build(cid)
        fixations = fixations_from_script(scn, 0, seed=0)
        opts = [IntentOption(a, o) for a, o in options]
        query = build_intent_prompt(render(scn, scn.cameras[0]).rgb, fixations,
                                    opts, [o.name for o in scn.objects])
        pred = predict_intent(query, oracle, scenario=scn, camera=0)
        if pred.chosen_option_index != answer_idx:
            raise ValueError(f"{cid}: oracle chose option {pred.chosen_option_index}, "
                             f"authored key says {answer_idx}")
        exp = scn.expected_intent
        if pred.action != exp["action"] or list(pred.target_objects) != exp["objects"]:
            raise ValueError(f"{cid}: oracle prediction {pred.action}"
                             f"({', '.join(pred.target_objects)}) does not match "
                             f"the scenario's expected intent {exp}")


def _check_probe_fallback() -> None:
    from .grasp import build_grasp_set
    from .pipeline import ground_pixel, object_pixel
    from .scene import extract_object_cloud

    scn = build("probe-fallback")
    cloud = extract_object_cloud(scn, "ball")
    gp = ground_pixel(scn, 0, object_pixel(scn, 0, "ball"))
    gset = build_grasp_set(cloud, gp, shape_hint="sphere",
                           target_object_id=scn.index_of("ball"), seed=0)
    if not gset.fallback_used:
        raise ValueError("probe-fallback: expected every view to filter empty")


def write_bundle(root=None) -> Path:
    """Write scenarios/ and manifests/ under ``root`` (default: package data).

    Answer keys are recomputed and cross-checked on every write; a failed
    check aborts before any manifest lands.
    """
    root = Path(root) if root is not None else bundle_dir()
    _check_intent_keys()
    _check_probe_fallback()
    manifests = {"intent_cases.json": _intent_manifest(),
                 "grasp_cases.json": _grasp_manifest(),
                 "end_to_end.json": _e2e_manifest()}
    scen_dir = root / "scenarios"
    man_dir = root / "manifests"
    scen_dir.mkdir(parents=True, exist_ok=True)
    man_dir.mkdir(parents=True, exist_ok=True)
    for name in SCENARIO_NAMES:
        save_scenario(build(name), scen_dir / f"{name}.json")
    for fname, cases in manifests.items():
        with open(man_dir / fname, "w") as f:
            json.dump(cases, f, indent=2, sort_keys=True)
            f.write("\n")
    return root
