"""Egocentric gaze stream -> grounded fixations in the robot camera frame.

The reprojection scan walks the depth image on a step x step grid,
back-projects every valid pixel, transforms it into the egocentric camera,
projects it there, and keeps the candidate whose projection is nearest to
the gaze point (ties go to the lowest (v, u) pixel). Fixation detection is
dispersion-based: a window grows while every member stays within
``dispersion_px`` of the running centroid and is emitted once it spans
``min_duration_s``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import NoDepthCoverageError, PoseUnavailableError
from .geometry import CameraIntrinsics, DepthImage, Pixel, RigidTransform, project
from .kernels import reproject_scan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GazeSample:
    timestamp: float
    pix: Pixel
    confidence: float = 1.0


@dataclass(frozen=True)
class EgoPose:
    """Maps robot-camera coordinates into the egocentric camera frame."""

    transform: RigidTransform
    timestamp: float = 0.0
    valid: bool = True


@dataclass(frozen=True)
class GazeConfig:
    dispersion_px: float = 15.0
    min_duration_s: float = 2.0
    projection_step: int = 4
    merge_gap_s: float = 0.2
    max_baseline_m: float = 0.75

    def __post_init__(self):
        for name in ("dispersion_px", "min_duration_s", "projection_step", "merge_gap_s", "max_baseline_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Fixation:
    centroid: Pixel
    start: float
    end: float
    order_index: int
    grounded_point: np.ndarray | None = None
    n_samples: int = 0

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {
            "centroid": {"u": self.centroid.u, "v": self.centroid.v},
            "start_s": self.start,
            "end_s": self.end,
            "order": self.order_index,
            "point_3d": None if self.grounded_point is None else [float(c) for c in self.grounded_point],
        }


@dataclass(frozen=True)
class ReprojectionResult:
    point: np.ndarray           # depth-camera frame, meters
    depth_pixel: Pixel          # winning (u, v) in the depth image
    projected: Pixel            # its projection in the target image
    distance_px: float


@dataclass(frozen=True)
class GroundedGaze:
    pixel: Pixel                # robot camera image
    point: np.ndarray           # robot camera frame, meters
    warning: str | None = None


def reproject_gaze_full(d: DepthImage, k_d: CameraIntrinsics, t_d_to_r: RigidTransform,
                        k_r: CameraIntrinsics, p_gaze: Pixel, step: int = 4) -> ReprojectionResult:
    """Full scan result: grounded point plus the winning pixel and projection."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    t34 = np.ascontiguousarray(t_d_to_r.as_matrix()[:3, :])
    found, u, v, x, y, z, ur, vr, dist_sq = reproject_scan(
        d.data, k_d.fx, k_d.fy, k_d.cx, k_d.cy, t34,
        k_r.fx, k_r.fy, k_r.cx, k_r.cy,
        float(p_gaze[0]), float(p_gaze[1]), int(step),
    )
    if not found:
        raise NoDepthCoverageError("no valid depth candidate lands in front of the target camera")
    return ReprojectionResult(np.array([x, y, z]), Pixel(u, v), Pixel(ur, vr), float(np.sqrt(dist_sq)))


def reproject_gaze(d: DepthImage, k_d: CameraIntrinsics, t_d_to_r: RigidTransform,
                   k_r: CameraIntrinsics, p_gaze: Pixel, step: int = 4) -> np.ndarray:
    """Ground a gaze pixel to the 3D point (depth-camera frame) whose projection is nearest."""
    return reproject_gaze_full(d, k_d, t_d_to_r, k_r, p_gaze, step).point


def gaze_to_robot_view(ego_pix: Pixel, ego_pose: EgoPose, robot_cam: CameraIntrinsics,
                       d: DepthImage, k_d: CameraIntrinsics, cfg: GazeConfig,
                       ego_cam: CameraIntrinsics | None = None) -> GroundedGaze:
    """Map an egocentric gaze pixel into the robot camera view with its 3D grounding.

    ``ego_cam`` defaults to the robot camera intrinsics (colocated-rig
    assumption); pass the real egocentric intrinsics when they differ.
    """
    if not ego_pose.valid:
        raise PoseUnavailableError(f"ego pose invalid at t={ego_pose.timestamp}")
    if ego_cam is None:
        ego_cam = robot_cam
    warning = None
    t = ego_pose.transform.translation
    baseline = float(np.sqrt(t @ t))
    if baseline > cfg.max_baseline_m:
        warning = f"ego camera baseline {baseline:.3f} m exceeds {cfg.max_baseline_m} m"
    res = reproject_gaze_full(d, k_d, ego_pose.transform, ego_cam, ego_pix, cfg.projection_step)
    pix = project(res.point, robot_cam)
    return GroundedGaze(pix, res.point, warning)


class _Segment:
    """Mutable fixation-in-progress; keeps samples so merges can be re-verified."""

    __slots__ = ("ts", "us", "vs", "points")

    def __init__(self):
        self.ts: list[float] = []
        self.us: list[float] = []
        self.vs: list[float] = []
        self.points: list[np.ndarray] = []

    def __len__(self):
        return len(self.ts)

    def add(self, t, u, v, point):
        self.ts.append(t)
        self.us.append(u)
        self.vs.append(v)
        if point is not None:
            self.points.append(np.asarray(point, dtype=float))

    @property
    def duration(self):
        return self.ts[-1] - self.ts[0] if self.ts else 0.0

    def centroid(self):
        return (sum(self.us) / len(self.us), sum(self.vs) / len(self.vs))

    def fits(self, u, v, dispersion):
        """Would adding (u, v) keep every member within dispersion of the new centroid?"""
        n = len(self.us) + 1
        cu = (sum(self.us) + u) / n
        cv = (sum(self.vs) + v) / n
        r2 = dispersion * dispersion
        if (u - cu) ** 2 + (v - cv) ** 2 > r2:
            return False
        return all((uu - cu) ** 2 + (vv - cv) ** 2 <= r2 for uu, vv in zip(self.us, self.vs))

    def merged_with(self, other: "_Segment") -> "_Segment":
        out = _Segment()
        out.ts = self.ts + other.ts
        out.us = self.us + other.us
        out.vs = self.vs + other.vs
        out.points = self.points + other.points
        return out

    def within_dispersion(self, dispersion) -> bool:
        cu = sum(self.us) / len(self.us)
        cv = sum(self.vs) / len(self.vs)
        r2 = dispersion * dispersion
        return all((u - cu) ** 2 + (v - cv) ** 2 <= r2 for u, v in zip(self.us, self.vs))

    def to_fixation(self, order_index) -> Fixation:
        cu, cv = self.centroid()
        point = None
        if self.points:
            point = np.mean(np.stack(self.points), axis=0)
        return Fixation(Pixel(cu, cv), self.ts[0], self.ts[-1], order_index, point, len(self.ts))


class FixationAccumulator:
    """Streaming dispersion-threshold fixation detector (single writer)."""

    def __init__(self, cfg: GazeConfig | None = None):
        self.cfg = cfg or GazeConfig()
        self._window = _Segment()
        self._done: list[_Segment] = []
        self._last_t: float | None = None

    def push(self, t: float, pix, point=None) -> None:
        if self._last_t is not None and t <= self._last_t:
            raise ValueError(f"timestamps must be strictly increasing ({t} after {self._last_t})")
        self._last_t = t
        u, v = float(pix[0]), float(pix[1])
        if len(self._window) == 0 or self._window.fits(u, v, self.cfg.dispersion_px):
            self._window.add(t, u, v, point)
            return
        self._close_window()
        self._window.add(t, u, v, point)

    def _close_window(self):
        if len(self._window) and self._window.duration >= self.cfg.min_duration_s:
            self._done.append(self._window)
        self._window = _Segment()

    def fixations(self, include_open: bool = True) -> list[Fixation]:
        """Current fixation list (merged, ordered). ``include_open`` also
        considers the still-growing window if it already qualifies."""
        segs = list(self._done)
        if include_open and len(self._window) and self._window.duration >= self.cfg.min_duration_s:
            segs.append(self._window)
        merged: list[_Segment] = []
        for seg in segs:
            if merged:
                prev = merged[-1]
                gap = seg.ts[0] - prev.ts[-1]
                cu1, cv1 = prev.centroid()
                cu2, cv2 = seg.centroid()
                d = ((cu1 - cu2) ** 2 + (cv1 - cv2) ** 2) ** 0.5
                if gap < self.cfg.merge_gap_s and d <= self.cfg.dispersion_px:
                    combined = prev.merged_with(seg)
                    if combined.within_dispersion(self.cfg.dispersion_px):
                        merged[-1] = combined
                        continue
            merged.append(seg)
        return [seg.to_fixation(i + 1) for i, seg in enumerate(merged)]

    def flush(self) -> list[Fixation]:
        self._close_window()
        return self.fixations(include_open=False)

    def reset(self) -> None:
        self._window = _Segment()
        self._done = []
        self._last_t = None


def detect_fixations(stream: Iterable, cfg: GazeConfig | None = None) -> list[Fixation]:
    """Batch detection over (t, pixel) or (t, pixel, point3d) tuples."""
    acc = FixationAccumulator(cfg)
    for item in stream:
        if len(item) == 2:
            t, pix = item
            acc.push(float(t), pix)
        else:
            t, pix, point = item
            acc.push(float(t), pix, point)
    return acc.flush()


DOT_RADIUS = 8
DOT_COLOR = (220, 30, 30)  # RGB


def annotate_fixations(image: np.ndarray, fixations: Sequence[Fixation],
                       radius: int = DOT_RADIUS) -> np.ndarray:
    """Draw a solid dot plus the order number for each fixation; pure function."""
    out = np.ascontiguousarray(image.copy())
    h, w = out.shape[:2]
    for fix in fixations:
        u, v = fix.centroid
        cu, cv_ = int(round(u)), int(round(v))
        if not (0 <= cu < w and 0 <= cv_ < h):
            log.warning("fixation %d centroid (%.1f, %.1f) outside %dx%d image; clamped",
                        fix.order_index, u, v, w, h)
            cu = min(max(cu, 0), w - 1)
            cv_ = min(max(cv_, 0), h - 1)
        cv2.circle(out, (cu, cv_), radius, DOT_COLOR, thickness=-1, lineType=cv2.LINE_8)
        org = (min(cu + radius + 2, w - 1), max(cv_ - radius - 2, 12))
        text = str(fix.order_index)
        cv2.putText(out, text, org, cv2.FONT_HERSHEY_SIMPLEX, 0.6, (0, 0, 0), 3, cv2.LINE_8)
        cv2.putText(out, text, org, cv2.FONT_HERSHEY_SIMPLEX, 0.6, (255, 255, 255), 1, cv2.LINE_8)
    return out


class StaticPoseProvider:
    """Ground-truth ego pose from fixed camera placements in the robot base frame."""

    def __init__(self, ego_cam_in_base: RigidTransform, robot_cam_in_base: RigidTransform):
        # T_ego<-robotcam = inv(T_base<-ego) @ T_base<-robotcam
        self._transform = ego_cam_in_base.inverse() @ robot_cam_in_base

    def pose_at(self, t: float) -> EgoPose:
        return EgoPose(self._transform, t, True)


class NoisyPoseProvider:
    """Wraps a provider with seeded Gaussian translation/rotation noise."""

    def __init__(self, inner, sigma_trans_m: float = 0.002, sigma_rot_deg: float = 0.2,
                 seed: int = 0):
        self.inner = inner
        self.sigma_trans_m = sigma_trans_m
        self.sigma_rot_deg = sigma_rot_deg
        self._rng = np.random.default_rng(seed)

    def pose_at(self, t: float) -> EgoPose:
        base = self.inner.pose_at(t)
        if not base.valid:
            return base
        dt = self._rng.normal(0.0, self.sigma_trans_m, size=3)
        rotvec = self._rng.normal(0.0, np.deg2rad(self.sigma_rot_deg), size=3)
        angle = float(np.sqrt(rotvec @ rotvec))
        if angle > 0:
            from .geometry import rotation_about_axis

            dr = rotation_about_axis(rotvec / angle, angle)
        else:
            dr = np.eye(3)
        noisy = RigidTransform(dr @ base.transform.rotation, base.transform.translation + dt)
        return EgoPose(noisy, base.timestamp, True)


def load_gaze_trace(path) -> list[GazeSample]:
    """JSON-lines trace: one {t_s, u, v, confidence} record per sample."""
    samples = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append(GazeSample(rec["t_s"], Pixel(rec["u"], rec["v"]), rec.get("confidence", 1.0)))
    return samples


def save_gaze_trace(samples: Iterable[GazeSample], path) -> None:
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps({"t_s": s.timestamp, "u": s.pix.u, "v": s.pix.v,
                                "confidence": s.confidence}) + "\n")


def save_fixations(fixations: Sequence[Fixation], path) -> None:
    with open(path, "w") as f:
        json.dump([fx.to_dict() for fx in fixations], f, indent=2)
