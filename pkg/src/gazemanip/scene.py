"""Tabletop scenes: primitive objects, cameras, deterministic rendering.

A scenario holds primitive objects (box / cylinder / sphere) posed in the
robot base frame plus one or more pinhole cameras. Rendering is an analytic
ray cast (no rasterizer, no GPU): every pixel gets the camera-frame Z depth
of the nearest primitive, an integer object id, and a flat-shaded color.
The table is an implicit bounded plane at ``table_z``, not a scene object.

Conventions: base frame +Z up, table surface at z = 0; camera frame
+Z forward, +X right, +Y down; ids are -1 background, 0 table, i + 1 for
``objects[i]``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import cv2
import jsonschema
import numpy as np

from .errors import EmptyInputError, NoObjectAtGazeError, SceneError
from .geometry import Aabb, CameraIntrinsics, DepthImage, Pixel, PointCloud, RigidTransform
from .kernels import raycast

KINDS = ("box", "cylinder", "sphere")
_KIND_CODE = {"box": 0, "cylinder": 1, "sphere": 2}
_DIM_COUNT = {"box": 3, "cylinder": 2, "sphere": 1}

BACKGROUND_COLOR = (26, 28, 32)
TABLE_COLOR = (126, 114, 98)


@dataclass
class SceneObject:
    """A primitive with task-relevant flags; pose maps local to base frame.

    Dimensions are full extents: box (lx, ly, lz), cylinder (radius, height),
    sphere (radius,). Containers carry a wall thickness and an opening face
    so collision checking sees walls rather than a solid block.
    """

    name: str
    kind: str
    dimensions: tuple
    pose: RigidTransform
    color: tuple = (180, 180, 180)
    graspable: bool = False
    pourable: bool = False
    container: bool = False
    openable: bool = False
    flat_surface: bool = False
    obstacle_overhead: bool = False
    open: bool = False
    wall_thickness: float = 0.0
    opening: str = "top"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SceneError(f"object {self.name!r}: unknown kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != _DIM_COUNT[self.kind]:
            raise SceneError(
                f"object {self.name!r}: {self.kind} needs {_DIM_COUNT[self.kind]} dimensions, got {len(dims)}")
        if any(d <= 0 for d in dims):
            raise SceneError(f"object {self.name!r}: dimensions must be positive, got {dims}")
        self.dimensions = dims
        if self.opening not in ("top", "front"):
            raise SceneError(f"object {self.name!r}: opening must be 'top' or 'front'")
        if self.container:
            if self.wall_thickness <= 0:
                raise SceneError(f"object {self.name!r}: container needs wall_thickness > 0")
            he = self.local_half_extents()
            if self.wall_thickness >= min(he):
                raise SceneError(f"object {self.name!r}: wall_thickness {self.wall_thickness} "
                                 f"not smaller than half extents {tuple(he)}")

    def local_half_extents(self) -> np.ndarray:
        if self.kind == "box":
            lx, ly, lz = self.dimensions
            return np.array([lx / 2, ly / 2, lz / 2])
        if self.kind == "cylinder":
            r, h = self.dimensions
            return np.array([r, r, h / 2])
        r = self.dimensions[0]
        return np.array([r, r, r])

    def kernel_params(self) -> np.ndarray:
        if self.kind == "box":
            return self.local_half_extents()
        if self.kind == "cylinder":
            r, h = self.dimensions
            return np.array([r, h / 2, 0.0])
        return np.array([self.dimensions[0], 0.0, 0.0])

    def aabb(self) -> Aabb:
        """World-frame box of the local bounding box (conservative under rotation)."""
        return _local_box_to_world(-self.local_half_extents(), self.local_half_extents(), self.pose)

    def _opening_axis_sign(self) -> tuple[int, int]:
        # top -> +z face, front -> +x face of the local frame
        return (2, +1) if self.opening == "top" else (0, +1)

    def collision_aabbs(self) -> list[Aabb]:
        """Collision volume: solid objects are one box, containers decompose
        into wall slabs so the interior stays reachable. The opening face has
        a slab (lid or door) while the container is closed; ``openable`` only
        says whether an open() skill can change that state."""
        if not self.container:
            return [self.aabb()]
        he = self.local_half_extents()
        w = self.wall_thickness
        axis_open, sign_open = self._opening_axis_sign()
        slabs = []
        for axis in range(3):
            for sign in (-1, +1):
                if axis == axis_open and sign == sign_open:
                    if self.open:
                        continue
                lo = -he.copy()
                hi = he.copy()
                if sign < 0:
                    hi[axis] = -he[axis] + w
                else:
                    lo[axis] = he[axis] - w
                slabs.append(_local_box_to_world(lo, hi, self.pose))
        return slabs

    def interior_aabb(self) -> Aabb:
        """Placement volume inside a container; extends to the rim on the
        opening face. Conservative outer bound under rotation, exact when
        the object is axis-aligned."""
        if not self.container:
            raise SceneError(f"object {self.name!r} is not a container")
        he = self.local_half_extents()
        w = self.wall_thickness
        lo = -he + w
        hi = he - w
        axis_open, sign_open = self._opening_axis_sign()
        if sign_open > 0:
            hi[axis_open] = he[axis_open]
        else:
            lo[axis_open] = -he[axis_open]
        return _local_box_to_world(lo, hi, self.pose)

    def top_height(self) -> float:
        return float(self.aabb().max[2])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "dimensions": list(self.dimensions),
            "pose": _pose_to_json(self.pose),
            "color": list(self.color),
            "flags": {
                "graspable": self.graspable,
                "pourable": self.pourable,
                "container": self.container,
                "openable": self.openable,
                "flat_surface": self.flat_surface,
                "obstacle_overhead": self.obstacle_overhead,
            },
            "state": {"open": self.open},
            "wall_thickness": self.wall_thickness,
            "opening": self.opening,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        flags = d.get("flags", {})
        state = d.get("state", {})
        return cls(
            name=d["name"],
            kind=d["kind"],
            dimensions=tuple(d["dimensions"]),
            pose=_pose_from_json(d["pose"]),
            color=tuple(d.get("color", (180, 180, 180))),
            graspable=flags.get("graspable", False),
            pourable=flags.get("pourable", False),
            container=flags.get("container", False),
            openable=flags.get("openable", False),
            flat_surface=flags.get("flat_surface", False),
            obstacle_overhead=flags.get("obstacle_overhead", False),
            open=state.get("open", False),
            wall_thickness=d.get("wall_thickness", 0.0),
            opening=d.get("opening", "top"),
        )


def camera_look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """T_base<-camera with +Z toward target, +X right, +Y down.

    Falls back to +X as the up hint when the view direction is vertical.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    up = np.asarray(up, dtype=float)
    z = target - eye
    nz = float(np.sqrt(z @ z))
    if nz < 1e-12:
        raise SceneError("camera eye and target coincide")
    z = z / nz
    if abs(float(z @ up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x = x / float(np.sqrt(x @ x))
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)


def _local_box_to_world(lo: np.ndarray, hi: np.ndarray, pose: RigidTransform) -> Aabb:
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    world = pose.apply(corners)
    return Aabb(world.min(axis=0), world.max(axis=0))


@dataclass(frozen=True)
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    pose: RigidTransform  # T_base<-camera

    def to_dict(self) -> dict:
        return {"name": self.name, "intrinsics": self.intrinsics.to_dict(),
                "pose": _pose_to_json(self.pose)}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["name"], CameraIntrinsics.from_dict(d["intrinsics"]), _pose_from_json(d["pose"]))


@dataclass
class Scenario:
    name: str
    objects: list
    cameras: list
    table_z: float = 0.0
    table_bounds: tuple = (0.0, 1.2, -0.8, 0.8)  # xmin, xmax, ymin, ymax
    difficulty: str = "easy"
    gaze_script: list = None         # [(object name, dwell seconds), ...]
    expected_intent: dict = None     # answer key for scripted runs
    marker_pose: RigidTransform = None  # fiducial in the base frame
    task: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise SceneError(f"duplicate object names in scenario {self.name!r}")
        cams = [c.name for c in self.cameras]
        if len(set(cams)) != len(cams):
            raise SceneError(f"duplicate camera names in scenario {self.name!r}")
        if self.difficulty not in ("easy", "medium", "hard"):
            raise SceneError(f"scenario {self.name!r}: bad difficulty {self.difficulty!r}")
        if self.marker_pose is None:
            self.marker_pose = RigidTransform.identity()
        if self.gaze_script is not None:
            script = []
            for obj_name, dwell in self.gaze_script:
                if obj_name not in names:
                    raise SceneError(
                        f"scenario {self.name!r}: gaze_script references unknown object {obj_name!r}")
                if dwell <= 0:
                    raise SceneError(f"scenario {self.name!r}: dwell must be positive, got {dwell}")
                script.append((obj_name, float(dwell)))
            self.gaze_script = script

    def camera(self, name: str) -> Camera:
        for c in self.cameras:
            if c.name == name:
                return c
        raise SceneError(f"scenario {self.name!r} has no camera {name!r}")

    def index_of(self, name: str) -> int:
        for i, o in enumerate(self.objects):
            if o.name == name:
                return i
        raise SceneError(f"scenario {self.name!r} has no object {name!r}")

    def object(self, name: str) -> SceneObject:
        return self.objects[self.index_of(name)]

    def clone(self) -> "Scenario":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        doc = {
            "version": 1,
            "name": self.name,
            "difficulty": self.difficulty,
            "table": {"z": self.table_z, "bounds": list(self.table_bounds)},
            "marker_pose": _pose_to_json(self.marker_pose),
            "objects": [o.to_dict() for o in self.objects],
            "cameras": [c.to_dict() for c in self.cameras],
            "task": self.task,
        }
        if self.gaze_script is not None:
            doc["gaze_script"] = [{"object": n, "dwell_s": s} for n, s in self.gaze_script]
        if self.expected_intent is not None:
            doc["expected_intent"] = self.expected_intent
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        validate_scenario(d)
        table = d.get("table", {})
        script = d.get("gaze_script")
        if script is not None:
            script = [(s["object"], s["dwell_s"]) for s in script]
        return cls(
            name=d["name"],
            objects=[SceneObject.from_dict(o) for o in d["objects"]],
            cameras=[Camera.from_dict(c) for c in d["cameras"]],
            table_z=table.get("z", 0.0),
            table_bounds=tuple(table.get("bounds", (0.0, 1.2, -0.8, 0.8))),
            difficulty=d.get("difficulty", "easy"),
            gaze_script=script,
            expected_intent=d.get("expected_intent"),
            marker_pose=_pose_from_json(d["marker_pose"]) if "marker_pose" in d else None,
            task=d.get("task", {}),
        )


def _pose_to_json(t: RigidTransform) -> dict:
    return {"rotation": [[float(v) for v in row] for row in t.rotation],
            "translation": [float(v) for v in t.translation]}


def _pose_from_json(d: dict) -> RigidTransform:
    return RigidTransform(np.array(d["rotation"], dtype=float),
                          np.array(d["translation"], dtype=float))


_POSE_SCHEMA = {
    "type": "object",
    "required": ["rotation", "translation"],
    "properties": {
        "rotation": {"type": "array", "minItems": 3, "maxItems": 3,
                     "items": {"type": "array", "minItems": 3, "maxItems": 3,
                               "items": {"type": "number"}}},
        "translation": {"type": "array", "minItems": 3, "maxItems": 3,
                        "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

_OBJECT_SCHEMA = {
    "type": "object",
    "required": ["name", "kind", "dimensions", "pose"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": list(KINDS)},
        "dimensions": {"type": "array", "minItems": 1, "maxItems": 3,
                       "items": {"type": "number", "exclusiveMinimum": 0}},
        "pose": _POSE_SCHEMA,
        "color": {"type": "array", "minItems": 3, "maxItems": 3,
                  "items": {"type": "integer", "minimum": 0, "maximum": 255}},
        "flags": {
            "type": "object",
            "properties": {k: {"type": "boolean"} for k in
                           ("graspable", "pourable", "container", "openable",
                            "flat_surface", "obstacle_overhead")},
            "additionalProperties": False,
        },
        "state": {"type": "object", "properties": {"open": {"type": "boolean"}},
                  "additionalProperties": False},
        "wall_thickness": {"type": "number", "minimum": 0},
        "opening": {"enum": ["top", "front"]},
    },
    "additionalProperties": False,
}

_CAMERA_SCHEMA = {
    "type": "object",
    "required": ["name", "intrinsics", "pose"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "properties": {
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
                "width": {"type": "integer", "exclusiveMinimum": 0},
                "height": {"type": "integer", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "pose": _POSE_SCHEMA,
    },
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "name", "objects", "cameras"],
    "properties": {
        "version": {"const": 1},
        "name": {"type": "string", "minLength": 1},
        "difficulty": {"enum": ["easy", "medium", "hard"]},
        "table": {
            "type": "object",
            "properties": {
                "z": {"type": "number"},
                "bounds": {"type": "array", "minItems": 4, "maxItems": 4,
                           "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "marker_pose": _POSE_SCHEMA,
        "objects": {"type": "array", "items": _OBJECT_SCHEMA},
        "cameras": {"type": "array", "minItems": 1, "items": _CAMERA_SCHEMA},
        "gaze_script": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["object", "dwell_s"],
                "properties": {
                    "object": {"type": "string", "minLength": 1},
                    "dwell_s": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "expected_intent": {"type": "object"},
        "task": {"type": "object"},
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def validate_scenario(doc: dict) -> None:
    """Schema-check a scenario document; the error names the offending JSON path."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SceneError(f"scenario document invalid at {e.json_path}: {e.message}")


def load_scenario(path) -> Scenario:
    with open(path) as f:
        doc = json.load(f)
    return Scenario.from_dict(doc)


def save_scenario(scn: Scenario, path) -> None:
    doc = scn.to_dict()
    validate_scenario(doc)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


@dataclass(frozen=True)
class RenderResult:
    rgb: np.ndarray    # (h, w, 3) uint8
    depth: DepthImage  # millimeter-quantized
    ids: np.ndarray    # (h, w) int32


def render(scn: Scenario, camera) -> RenderResult:
    """Ray-cast the scenario through one camera (name or Camera)."""
    cam = scn.camera(camera) if isinstance(camera, str) else camera
    k = cam.intrinsics
    us = (np.arange(k.width, dtype=np.float64) - k.cx) / k.fx
    vs = (np.arange(k.height, dtype=np.float64) - k.cy) / k.fy
    dy, dx = np.meshgrid(vs, us, indexing="ij")

    # copies: the kernel wants writable contiguous buffers, poses freeze theirs
    r_wc = np.array(cam.pose.rotation)
    o_w = np.array(cam.pose.translation)
    n = len(scn.objects)
    kinds = np.zeros(n, dtype=np.int32)
    params = np.zeros((n, 3))
    m_cl = np.zeros((n, 3, 3))
    o_l = np.zeros((n, 3))
    for i, obj in enumerate(scn.objects):
        kinds[i] = _KIND_CODE[obj.kind]
        params[i] = obj.kernel_params()
        r_lw = obj.pose.rotation.T
        m_cl[i] = r_lw @ r_wc
        o_l[i] = r_lw @ (o_w - obj.pose.translation)
    xmin, xmax, ymin, ymax = scn.table_bounds
    table = np.array([1.0, scn.table_z, xmin, xmax, ymin, ymax])

    t, ids = raycast(dx, dy, o_w, r_wc, kinds, params,
                     np.ascontiguousarray(m_cl), np.ascontiguousarray(o_l), table)

    depth = DepthImage.from_meters(np.where(ids >= 0, t, 0.0))
    palette = np.array([BACKGROUND_COLOR, TABLE_COLOR]
                       + [list(o.color) for o in scn.objects], dtype=np.float64)
    base = palette[ids + 1]
    shade = np.where(ids >= 0, np.clip(1.15 - 0.4 * t, 0.45, 1.0), 1.0)
    rgb = np.rint(base * shade[..., None]).astype(np.uint8)
    return RenderResult(rgb, depth, ids.astype(np.int32))


def segment_at(scn: Scenario, camera, pix: Pixel, margin: int = 20,
               erode_px: int = 0, ids: np.ndarray | None = None) -> int:
    """Object index under (or within ``margin`` px of) a pixel.

    The table and background never match. ``erode_px`` shrinks every object
    mask first, which rejects gaze landing on 1-2 px silhouette slivers.
    Ties at equal distance go to the lower object index, then lower (v, u).
    Raises NoObjectAtGazeError when nothing qualifies.
    """
    if ids is None:
        ids = render(scn, camera).ids
    if erode_px > 0:
        kernel = np.ones((2 * erode_px + 1, 2 * erode_px + 1), dtype=np.uint8)
        eroded = np.full_like(ids, -1)
        for idx in np.unique(ids):
            if idx <= 0:
                continue
            mask = (ids == idx).astype(np.uint8)
            mask = cv2.erode(mask, kernel)
            eroded[mask > 0] = idx
        ids = eroded
    h, w = ids.shape
    u0, v0 = int(round(float(pix[0]))), int(round(float(pix[1])))
    if 0 <= u0 < w and 0 <= v0 < h and ids[v0, u0] > 0:
        return int(ids[v0, u0]) - 1
    vlo, vhi = max(v0 - margin, 0), min(v0 + margin + 1, h)
    ulo, uhi = max(u0 - margin, 0), min(u0 + margin + 1, w)
    if vlo >= vhi or ulo >= uhi:
        raise NoObjectAtGazeError(f"gaze ({pix[0]:.1f}, {pix[1]:.1f}) outside the image")
    win = ids[vlo:vhi, ulo:uhi]
    vv, uu = np.nonzero(win > 0)
    if vv.size == 0:
        raise NoObjectAtGazeError(f"no object within {margin} px of ({pix[0]:.1f}, {pix[1]:.1f})")
    dv = vv + vlo - v0
    du = uu + ulo - u0
    d2 = dv * dv + du * du
    inside = d2 <= margin * margin
    if not inside.any():
        raise NoObjectAtGazeError(f"no object within {margin} px of ({pix[0]:.1f}, {pix[1]:.1f})")
    vv, uu, dv, du, d2 = vv[inside], uu[inside], dv[inside], du[inside], d2[inside]
    obj = win[vv, uu]
    order = np.lexsort((du, dv, obj, d2))
    return int(obj[order[0]]) - 1


def cloud_from_depth(depth: DepthImage, k: CameraIntrinsics,
                     mask: np.ndarray | None = None) -> np.ndarray:
    """Back-project a depth image to (N, 3) camera-frame points (row-major order)."""
    d = depth.data
    if mask is None:
        mask = d > 0
    else:
        mask = mask & (d > 0)
    vv, uu = np.nonzero(mask)
    z = d[vv, uu].astype(np.float64) * 0.001
    x = (uu.astype(np.float64) - k.cx) * z / k.fx
    y = (vv.astype(np.float64) - k.cy) * z / k.fy
    return np.column_stack([x, y, z])


def extract_object_cloud(scn: Scenario, obj, cameras=None, voxel: float = 0.005) -> PointCloud:
    """Fused base-frame cloud of one object (name or index) across cameras.

    Points are deduplicated on a ``voxel``-sized grid keeping the first point
    encountered in camera order, so the result is deterministic.
    """
    idx = scn.index_of(obj) if isinstance(obj, str) else int(obj)
    if not 0 <= idx < len(scn.objects):
        raise SceneError(f"object index {idx} out of range")
    cams = scn.cameras if cameras is None else [
        scn.camera(c) if isinstance(c, str) else c for c in cameras]
    chunks = []
    for cam in cams:
        res = render(scn, cam)
        pts_cam = cloud_from_depth(res.depth, cam.intrinsics, res.ids == idx + 1)
        if pts_cam.shape[0]:
            chunks.append(cam.pose.apply(pts_cam))
    if not chunks:
        raise EmptyInputError(f"object {scn.objects[idx].name!r} not visible from any camera")
    pts = np.concatenate(chunks, axis=0)
    if voxel > 0:
        keys = np.floor(pts / voxel).astype(np.int64)
        _, first = np.unique(keys, axis=0, return_index=True)
        pts = pts[np.sort(first)]
    return PointCloud(pts)
