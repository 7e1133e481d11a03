"""Grasp candidate generation, rotation augmentation, filtering, diversification.

Pipeline for one target cloud: rotate the cloud about the base X axis
(through its centroid) by 180 / +135 / -135 degrees, run the analytic
antipodal generator in each view, map candidates back to the base frame,
filter by bounding-box confinement and finger contact, take each view's
median candidate, and fan it out with {-45, 0, +45} degree pitch offsets
about the closing axis; up to 9 labeled candidates. If every view filters
empty, fall back to the raw candidate nearest the gaze point.

Gripper frame convention: +Z is the approach axis (points from wrist
toward the scene), +X is the closing axis, the TCP sits between fingertips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import FallbackNeededError, NoFeasibleGraspError
from .geometry import Aabb, PointCloud, RigidTransform, aabb_of, rotation_about_axis

GRIPPER_MAX_WIDTH = 0.085
CONTACT_EPS = 0.005
BBOX_PADDING_FRACTION = 0.10
ROTATION_VIEW_DEGS = (180.0, 135.0, -135.0)
PITCH_OFFSET_DEGS = (-45.0, 0.0, 45.0)
DEDUP_TRANSLATION_M = 0.001
DEDUP_ROTATION_DEG = 1.0
# each rotated view admits approaches near its synthetic overhead axis, so the
# three views contribute distinct approach families instead of one set thrice
VIEW_ADMISSION_CONE_DEG = 75.0

# finger geometry (gripper frame, meters)
FINGER_SPAN = (-0.04, 0.0)       # contact segment along +Z, fingertip at z=0
FINGER_SAMPLES = 9
FINGER_PAD_HALF_Y = 0.025
FINGER_BODY_PAD_X = 0.012
GRIPPER_BODY_SPAN_Z = (-0.12, 0.005)


@dataclass(frozen=True)
class GraspCandidate:
    pose: RigidTransform
    width: float
    score: float
    label: int = 0
    rotation_view: float | None = None   # 180 / +135 / -135, None before augmentation
    pitch_offset: float = 0.0
    fallback: bool = False

    def __post_init__(self):
        if not 0 < self.width <= GRIPPER_MAX_WIDTH + 1e-12:
            raise ValueError(f"grasp width {self.width} outside (0, {GRIPPER_MAX_WIDTH}]")

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 2]

    @property
    def closing_axis(self) -> np.ndarray:
        return self.pose.rotation[:, 0]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "pose": [float(v) for v in self.pose.as_matrix().reshape(-1)],  # row-major 4x4
            "width_m": self.width,
            "score": self.score,
            "provenance": {
                "rotation_view": self.rotation_view,
                "pitch_offset": self.pitch_offset,
                "fallback": self.fallback,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraspCandidate":
        prov = d.get("provenance", {})
        return cls(
            pose=RigidTransform.from_matrix(np.array(d["pose"], dtype=float).reshape(4, 4)),
            width=d["width_m"],
            score=d["score"],
            label=d.get("label", 0),
            rotation_view=prov.get("rotation_view"),
            pitch_offset=prov.get("pitch_offset", 0.0),
            fallback=prov.get("fallback", False),
        )


@dataclass
class GraspSet:
    candidates: list
    target_object_id: int = -1
    gaze_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fallback_used: bool = False

    def __post_init__(self):
        self.gaze_point = np.asarray(self.gaze_point, dtype=float).reshape(3)
        labels = [c.label for c in self.candidates]
        if labels != list(range(1, len(labels) + 1)):
            raise ValueError(f"labels must be consecutive 1..N, got {labels}")

    def __len__(self):
        return len(self.candidates)

    def by_label(self, label: int) -> GraspCandidate:
        return self.candidates[label - 1]

    def to_dict(self) -> dict:
        return {
            "target_object_id": self.target_object_id,
            "gaze_point": [float(v) for v in self.gaze_point],
            "fallback_used": self.fallback_used,
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraspSet":
        return cls([GraspCandidate.from_dict(c) for c in d["candidates"]],
                   d.get("target_object_id", -1),
                   np.array(d.get("gaze_point", (0.0, 0.0, 0.0))),
                   d.get("fallback_used", False))

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load_json(cls, path) -> "GraspSet":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _min_area_angle(p2d: np.ndarray, step_deg: float = 0.1) -> float:
    """Angle (radians) whose rotated frame minimizes the 2D bounding-box area.

    Deterministic grid search over [0, 90); ties keep the smallest angle.
    """
    ang = np.deg2rad(np.arange(0.0, 90.0, step_deg))
    c, s = np.cos(ang), np.sin(ang)
    x = p2d[:, 0, None] * c + p2d[:, 1, None] * s
    y = -p2d[:, 0, None] * s + p2d[:, 1, None] * c
    area = (x.max(axis=0) - x.min(axis=0)) * (y.max(axis=0) - y.min(axis=0))
    return float(ang[int(np.argmin(area))])


def _pca_frame(pts: np.ndarray):
    """Oriented object frame: PCA seed refined to a local min-volume box.

    Raw PCA eigenvectors are unreliable for symmetric cross-sections (square
    faces give degenerate eigenvalues and arbitrary in-plane axes), so each
    axis pair is re-aligned by a min-area search in its plane, swept twice.
    Axes are deterministic given the cloud: descending extent, sign fixed so
    the largest-magnitude component is positive, right-handed.
    """
    c = pts.mean(axis=0)
    centered = pts - c
    cov = centered.T @ centered / max(len(pts), 1)
    _, evecs = np.linalg.eigh(cov)
    axes = evecs[:, ::-1].copy()
    for _ in range(2):
        for i, j in ((0, 1), (1, 2), (0, 2)):
            p2d = np.column_stack([centered @ axes[:, i], centered @ axes[:, j]])
            th = _min_area_angle(p2d)
            co, si = np.cos(th), np.sin(th)
            ai = co * axes[:, i] + si * axes[:, j]
            aj = -si * axes[:, i] + co * axes[:, j]
            axes[:, i], axes[:, j] = ai, aj
    spans = (centered @ axes).max(axis=0) - (centered @ axes).min(axis=0)
    axes = axes[:, np.argsort(spans)[::-1]]
    for j in range(2):
        v = axes[:, j]
        if v[int(np.argmax(np.abs(v)))] < 0:
            axes[:, j] = -v
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return c, axes


def _axis_extents(pts: np.ndarray, c: np.ndarray, axes: np.ndarray):
    proj = (pts - c) @ axes                 # (n, 3)
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    return lo, hi


def _frame_from(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rotation with +Z = approach, +X = closing; inputs must be unit and orthogonal."""
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _score(width: float, center: np.ndarray, closing: np.ndarray, centroid: np.ndarray) -> float:
    # alignment: how close the closing line passes to the cloud centroid
    d = centroid - center
    off = d - (d @ closing) * closing
    align = max(0.0, 1.0 - float(np.sqrt(off @ off)) / 0.05)
    return 0.5 * (1.0 - width / GRIPPER_MAX_WIDTH) + 0.5 * align


def generate_raw_grasps(cloud: PointCloud, shape_hint: str, seed: int = 0,
                        max_width: float = GRIPPER_MAX_WIDTH) -> list:
    """Analytic antipodal candidates for one (possibly rotated) object cloud.

    box: PCA-aligned face-pair grasps (closing on each axis whose extent fits
    the gripper, approaching along each perpendicular axis). cylinder: radial
    side grasps at 0.3/0.5/0.7 of the axis extent, four azimuths with a seeded
    phase, plus one end grasp per axis end. sphere: great-circle approaches
    closing on a fitted diameter. Deterministic given (cloud, seed).
    """
    pts = cloud.points
    if pts.shape[0] == 0:
        raise NoFeasibleGraspError("empty cloud")
    rng = np.random.default_rng(seed)
    c, axes = _pca_frame(pts)
    lo, hi = _axis_extents(pts, c, axes)
    extent = hi - lo
    box_center = c + axes @ ((lo + hi) / 2.0)
    cands: list[GraspCandidate] = []

    if shape_hint == "box":
        for i in range(3):
            w = float(extent[i])
            if not 0 < w <= max_width:
                continue
            closing = axes[:, i]
            for j in range(3):
                if j == i:
                    continue
                for sign in (1.0, -1.0):
                    approach = sign * axes[:, j]
                    rot = _frame_from(approach, closing)
                    pose = RigidTransform(rot, box_center)
                    cands.append(GraspCandidate(
                        pose, w, _score(w, box_center, closing, c)))
    elif shape_hint == "cylinder":
        # axis = direction along which the two cross extents match best
        spread = [abs(extent[(i + 1) % 3] - extent[(i + 2) % 3]) for i in range(3)]
        ai = int(np.argmin(spread))
        u = axes[:, ai]
        f1 = axes[:, (ai + 1) % 3]
        f2 = axes[:, (ai + 2) % 3]
        # mid-extent beats the centroid as the axis point: partial shells from
        # one-sided views bias the mean radially, mid-extent stays centered
        rel = pts - box_center
        proj = rel @ u
        radial = rel - np.outer(proj, u)
        r_est = float(np.sqrt((radial * radial).sum(axis=1)).max())
        w = 2.0 * r_est
        if 0 < w <= max_width:
            phase = float(rng.uniform(0.0, np.pi / 2.0))
            base_lo = box_center + u * float(proj.min())
            span = float(proj.max() - proj.min())
            for frac in (0.3, 0.5, 0.7):
                center = base_lo + u * (frac * span)
                for kaz in range(4):
                    az = phase + kaz * (np.pi / 2.0)
                    rhat = np.cos(az) * f1 + np.sin(az) * f2
                    approach = -rhat
                    closing = np.cross(u, rhat)
                    nrm = float(np.sqrt(closing @ closing))
                    if nrm < 1e-9:
                        continue
                    closing = closing / nrm
                    pose = RigidTransform(_frame_from(approach, closing), center)
                    cands.append(GraspCandidate(pose, w, _score(w, center, closing, c)))
            # end grasps: approach along the axis from either end, slightly inset;
            # the generator has no gravity notion, views decide which end is up
            inset = min(0.03, span / 3.0)
            for offset, approach in ((float(proj.max()) - inset, -u),
                                     (float(proj.min()) + inset, u)):
                center = box_center + u * offset
                closing = f1
                pose = RigidTransform(_frame_from(approach, closing), center)
                cands.append(GraspCandidate(pose, w, _score(w, center, closing, c)))
    elif shape_hint == "sphere":
        r_est = float(np.sqrt(((pts - box_center) ** 2).sum(axis=1)).max())
        w = 2.0 * r_est
        if 0 < w <= max_width:
            phase = float(rng.uniform(0.0, np.pi / 4.0))
            closing = axes[:, 1]
            a1 = axes[:, 0]
            a2 = axes[:, 2]
            for kth in range(8):
                th = phase + kth * (np.pi / 4.0)
                approach = -(np.cos(th) * a2 + np.sin(th) * a1)
                pose = RigidTransform(_frame_from(approach, closing), box_center)
                cands.append(GraspCandidate(pose, w, _score(w, box_center, closing, c)))
    else:
        raise ValueError(f"unknown shape hint {shape_hint!r}")

    if not cands:
        raise NoFeasibleGraspError(
            f"no antipodal pair within gripper width {max_width} m for {shape_hint} cloud")
    return cands


@dataclass(frozen=True)
class RotatedView:
    angle_deg: float
    transform: RigidTransform    # base -> view
    cloud: PointCloud

    def map_back(self, pose: RigidTransform) -> RigidTransform:
        return self.transform.inverse() @ pose

    def overhead_axis(self) -> np.ndarray:
        """Base-frame direction a view-frame overhead camera looks along (+Z
        after the rotation, pulled back): straight down for the 180 view,
        45-degree descents for the +/-135 views."""
        return self.transform.rotation.T @ np.array([0.0, 0.0, 1.0])


def rotation_augment(cloud: PointCloud, angles_deg=ROTATION_VIEW_DEGS) -> list:
    """Rotate the cloud about the base X axis through its centroid, per angle."""
    centroid = cloud.points.mean(axis=0)
    views = []
    for ang in angles_deg:
        r = rotation_about_axis(np.array([1.0, 0.0, 0.0]), np.deg2rad(ang))
        t = RigidTransform(r, centroid - r @ centroid)
        views.append(RotatedView(ang, t, PointCloud(t.apply(cloud.points))))
    return views


def finger_contact_segments(pose: RigidTransform, width: float,
                            n: int = FINGER_SAMPLES) -> np.ndarray:
    """(2, n, 3) base-frame sample points along both finger contact segments."""
    zs = np.linspace(FINGER_SPAN[0], FINGER_SPAN[1], n)
    out = np.empty((2, n, 3))
    for fi, sx in enumerate((-1.0, 1.0)):
        local = np.column_stack([np.full(n, sx * width / 2.0), np.zeros(n), zs])
        out[fi] = pose.apply(local)
    return out


def gripper_collision_aabb(pose: RigidTransform, width: float) -> Aabb:
    """Conservative base-frame box over the gripper body and fingers."""
    hx = width / 2.0 + FINGER_BODY_PAD_X
    hy = FINGER_PAD_HALF_Y
    zlo, zhi = GRIPPER_BODY_SPAN_Z
    corners = np.array([[sx * hx, sy * hy, z]
                        for sx in (-1, 1) for sy in (-1, 1) for z in (zlo, zhi)])
    world = pose.apply(corners)
    return Aabb(world.min(axis=0), world.max(axis=0))


def passes_filter(cand: GraspCandidate, tree: cKDTree, bbox: Aabb,
                  eps: float = CONTACT_EPS) -> bool:
    if not bbox.contains(cand.translation):
        return False
    segs = finger_contact_segments(cand.pose, cand.width)
    for fi in range(2):
        d, _ = tree.query(segs[fi])
        if float(d.min()) > eps:
            return False
    return True


def filter_grasps(cands, object_cloud: PointCloud, bbox: Aabb,
                  eps: float = CONTACT_EPS) -> list:
    """Keep candidates centered inside bbox whose finger segments both pass
    within ``eps`` of at least one cloud point."""
    if not cands:
        return []
    tree = cKDTree(object_cloud.points)
    return [c for c in cands if passes_filter(c, tree, bbox, eps)]


def apply_pitch_offset(cand: GraspCandidate, offset_deg: float) -> GraspCandidate:
    """Rotate about the closing axis through the grasp center; translation exact."""
    if offset_deg == 0.0:
        return replace(cand, pitch_offset=0.0)
    r_off = rotation_about_axis(cand.closing_axis, np.deg2rad(offset_deg))
    pose = RigidTransform(r_off @ cand.pose.rotation, cand.pose.translation)
    return replace(cand, pose=pose, pitch_offset=offset_deg)


def rotation_angle_deg(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, degrees."""
    tr = float(np.trace(r1.T @ r2))
    return float(np.degrees(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))))


def _is_duplicate(a: GraspCandidate, b: GraspCandidate) -> bool:
    dt = a.translation - b.translation
    if float(np.sqrt(dt @ dt)) >= DEDUP_TRANSLATION_M:
        return False
    return rotation_angle_deg(a.pose.rotation, b.pose.rotation) < DEDUP_ROTATION_DEG


def select_median_and_diversify(per_view_filtered, target_object_id: int = -1,
                                gaze_point=np.zeros(3)) -> GraspSet:
    """Per view: pick the candidate nearest the componentwise translation
    median, then fan it out with pitch offsets; dedup keeps the earlier label.

    ``per_view_filtered`` is [(angle_deg, [candidates in base frame]), ...].
    Raises FallbackNeededError when every view is empty; callers normally go
    through build_grasp_set which handles the fallback.
    """
    kept: list[GraspCandidate] = []
    any_view = False
    for angle, cands in per_view_filtered:
        if not cands:
            continue
        any_view = True
        trans = np.stack([c.translation for c in cands])
        med = np.median(trans, axis=0)
        dists = np.sqrt(((trans - med) ** 2).sum(axis=1))
        median_cand = replace(cands[int(np.argmin(dists))], rotation_view=angle)
        for off in PITCH_OFFSET_DEGS:
            cand = apply_pitch_offset(median_cand, off)
            if any(_is_duplicate(cand, k) for k in kept):
                continue
            kept.append(cand)
    if not any_view:
        raise FallbackNeededError("every rotation view filtered empty")
    labeled = [replace(c, label=i + 1) for i, c in enumerate(kept)]
    return GraspSet(labeled, target_object_id, gaze_point)


def fallback_nearest_to_gaze(raw_candidates, gaze_point) -> GraspCandidate:
    """Raw candidate whose center is nearest the gaze point; fallback flag set."""
    if not raw_candidates:
        raise NoFeasibleGraspError("no raw candidates to fall back on")
    g = np.asarray(gaze_point, dtype=float).reshape(3)
    dists = [float(np.linalg.norm(c.translation - g)) for c in raw_candidates]
    best = raw_candidates[int(np.argmin(dists))]
    return replace(best, fallback=True)


def build_grasp_set(cloud: PointCloud, gaze_point, shape_hint: str,
                    target_object_id: int = -1, seed: int = 0,
                    padding_fraction: float = BBOX_PADDING_FRACTION,
                    eps: float = CONTACT_EPS,
                    angles_deg=ROTATION_VIEW_DEGS) -> GraspSet:
    """Full pipeline: augment -> generate -> map back -> filter -> median ->
    diversify -> re-filter. Falls back to the gaze-nearest raw candidate only
    when every view filters empty. ``angles_deg`` narrows the rotation views,
    mainly to demonstrate what breaks without the full fan."""
    bbox = aabb_of(cloud, padding=padding_fraction * float(
        np.sqrt(((cloud.points.max(0) - cloud.points.min(0)) ** 2).sum())))
    tree = cKDTree(cloud.points)
    views = rotation_augment(cloud, angles_deg)
    cone_cos = np.cos(np.deg2rad(VIEW_ADMISSION_CONE_DEG))
    all_raw: list[GraspCandidate] = []
    per_view = []
    for vi, view in enumerate(views):
        try:
            raw = generate_raw_grasps(view.cloud, shape_hint, seed=seed + vi)
        except NoFeasibleGraspError:
            per_view.append((view.angle_deg, []))
            continue
        mapped = [replace(c, pose=view.map_back(c.pose), rotation_view=view.angle_deg)
                  for c in raw]
        all_raw.extend(mapped)
        axis = view.overhead_axis()
        admitted = [c for c in mapped if float(c.approach @ axis) >= cone_cos]
        per_view.append((view.angle_deg,
                         [c for c in admitted if passes_filter(c, tree, bbox, eps)]))

    if all(not cands for _, cands in per_view):
        fb = fallback_nearest_to_gaze(all_raw, gaze_point)
        return GraspSet([replace(fb, label=1)], target_object_id,
                        np.asarray(gaze_point, dtype=float), fallback_used=True)

    gs = select_median_and_diversify(per_view, target_object_id, gaze_point)
    # pitch offsets can tilt a finger segment off the surface; final set must
    # still satisfy the filter predicate in the base frame
    final = [c for c in gs.candidates if passes_filter(c, tree, bbox, eps)]
    if not final:
        # the 0-offset medians passed the per-view filter, so this only fires
        # if dedup collapsed one into a failing offset; keep the medians
        final = [c for c in gs.candidates if c.pitch_offset == 0.0]
    labeled = [replace(c, label=i + 1) for i, c in enumerate(final)]
    return GraspSet(labeled, target_object_id, np.asarray(gaze_point, dtype=float))
