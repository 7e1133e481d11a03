"""Pinhole cameras, rigid transforms, depth images, point clouds, and boxes.

Conventions used everywhere downstream:
  - pixel (u, v) = (column, row); depth images are indexed data[v, u]
  - depth is stored as integer millimeters, 0 = invalid
  - rotations are 3x3 orthonormal matrices; quaternions/rpy only at I/O
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import cv2
import numpy as np

from .errors import BehindCameraError, EmptyInputError, InvalidDepthError

ORTHONORMAL_TOL = 1e-9


class Pixel(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


def _check_rotation(r: np.ndarray):
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err >= ORTHONORMAL_TOL:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    if np.linalg.det(r) < 0:
        raise ValueError("rotation has negative determinant (reflection)")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; maps points from the source frame to the target frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        _check_rotation(r)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation


def transform_point(t: RigidTransform, p: np.ndarray) -> np.ndarray:
    return t.apply(p)


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    a = np.asarray(axis, dtype=float)
    a = a / np.sqrt(a @ a)
    x, y, z = a
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def axis_angle_of(rot: np.ndarray):
    """Decompose a rotation matrix into (unit axis, angle in radians).

    The identity returns (None, 0.0). Near pi the skew part vanishes, so the
    axis is recovered from the symmetric part instead.
    """
    rot = np.asarray(rot, dtype=float)
    cos_a = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_a))
    if angle < 1e-12:
        return None, 0.0
    if angle > np.pi - 1e-6:
        sym = (rot + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(sym)))
        axis = sym[:, i] / np.sqrt(sym[i, i])
        return axis / np.linalg.norm(axis), angle
    v = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return v / (2.0 * np.sin(angle)), angle


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z(yaw) @ Y(pitch) @ X(roll), angles in radians."""
    rx = rotation_about_axis([1, 0, 0], roll)
    ry = rotation_about_axis([0, 1, 0], pitch)
    rz = rotation_about_axis([0, 0, 1], yaw)
    return rz @ ry @ rx


@dataclass
class DepthImage:
    """Row-major uint16 depth in millimeters; 0 marks invalid pixels."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=np.uint16)).reshape(
            self.height, self.width
        )
        self.data = d

    @classmethod
    def from_meters(cls, z_m: np.ndarray) -> "DepthImage":
        """Quantize float meters to nearest millimeter; non-finite/<=0 become invalid."""
        z = np.asarray(z_m, dtype=float)
        mm = np.where(np.isfinite(z) & (z > 0), np.rint(z * 1000.0), 0.0)
        mm = np.clip(mm, 0, np.iinfo(np.uint16).max).astype(np.uint16)
        return cls(z.shape[1], z.shape[0], mm)

    def at(self, pix: Pixel) -> int:
        return int(self.data[int(pix.v), int(pix.u)])

    def to_png_bytes(self) -> bytes:
        ok, buf = cv2.imencode(".png", self.data)
        if not ok:
            raise IOError("PNG encoding failed")
        return buf.tobytes()

    def save_png(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png_bytes())

    @classmethod
    def from_png_bytes(cls, blob: bytes) -> "DepthImage":
        arr = cv2.imdecode(np.frombuffer(blob, np.uint8), cv2.IMREAD_UNCHANGED)
        if arr is None:
            raise IOError("not a decodable PNG")
        if arr.dtype != np.uint16 or arr.ndim != 2:
            raise ValueError(f"expected 16-bit grayscale PNG, got dtype={arr.dtype} ndim={arr.ndim}")
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def load_png(cls, path) -> "DepthImage":
        with open(path, "rb") as f:
            return cls.from_png_bytes(f.read())


@dataclass
class PointCloud:
    """(N, 3) points in meters with optional per-point integer object labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must cover every point")
            self.labels = lab

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, t: RigidTransform) -> "PointCloud":
        return PointCloud(t.apply(self.points), None if self.labels is None else self.labels.copy())

    def save_ply(self, path) -> None:
        with open(path, "w") as f:
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {len(self)}\n")
            f.write("property float x\nproperty float y\nproperty float z\n")
            if self.labels is not None:
                f.write("property int label\n")
            f.write("end_header\n")
            if self.labels is None:
                for x, y, z in self.points:
                    f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
            else:
                for (x, y, z), l in zip(self.points, self.labels):
                    f.write(f"{x:.6f} {y:.6f} {z:.6f} {int(l)}\n")

    @classmethod
    def load_ply(cls, path) -> "PointCloud":
        with open(path) as f:
            line = f.readline().strip()
            if line != "ply":
                raise IOError("not a PLY file")
            n = 0
            props = []
            while True:
                line = f.readline()
                if not line:
                    raise IOError("truncated PLY header")
                line = line.strip()
                if line.startswith("element vertex"):
                    n = int(line.split()[-1])
                elif line.startswith("property"):
                    props.append(line.split()[-1])
                elif line == "end_header":
                    break
            has_label = "label" in props
            pts = np.zeros((n, 3))
            labs = np.zeros(n, dtype=np.int64) if has_label else None
            for i in range(n):
                parts = f.readline().split()
                pts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
                if has_label:
                    labs[i] = int(parts[3])
        return cls(pts, labs)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if (lo > hi).any():
            raise ValueError(f"invalid box: min {lo} > max {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        e = self.extents
        return float(np.sqrt(e @ e))

    def expanded(self, padding: float) -> "Aabb":
        return Aabb(self.min - padding, self.max + padding)

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, dtype=float)
        return bool((p >= self.min).all() and (p <= self.max).all())

    def intersects(self, other: "Aabb") -> bool:
        return bool((self.min <= other.max).all() and (other.min <= self.max).all())

    def distance_to(self, other: "Aabb") -> float:
        """Euclidean gap between two boxes (0 when touching/overlapping)."""
        gap = np.maximum(0.0, np.maximum(self.min - other.max, other.min - self.max))
        return float(np.sqrt(gap @ gap))

    @classmethod
    def of_points(cls, pts: np.ndarray) -> "Aabb":
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise EmptyInputError("cannot bound an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))


def back_project(pix: Pixel, depth_mm: int, k: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel + depth to a camera-frame 3D point (meters)."""
    if depth_mm <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth_mm} mm")
    z = depth_mm * 0.001
    x = (pix[0] - k.cx) * z / k.fx
    y = (pix[1] - k.cy) * z / k.fy
    return np.array([x, y, z])


def project(p: np.ndarray, k: CameraIntrinsics) -> Pixel:
    """Pinhole projection of a camera-frame point; Z must be positive."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0:
        raise BehindCameraError(f"point has Z={z} <= 0")
    return Pixel(x * k.fx / z + k.cx, y * k.fy / z + k.cy)


def aabb_of(cloud: PointCloud, padding: float = 0.0) -> Aabb:
    """Bounding box of a cloud, expanded by ``padding`` on every side."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot bound an empty cloud")
    return Aabb.of_points(cloud.points).expanded(padding)
