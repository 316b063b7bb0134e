"""3D math primitives: vectors, quaternion rotations, scale-rotate-translate
transforms, oriented bounding boxes and pinhole cameras.

Conventions
-----------
World frame is right-handed and Z-up. A camera looks along its local +Z with
+X to the right and +Y down in the image, so image ``v`` grows downwards.
Pixel ``(row, col)`` covers ``[col, col + 1) x [row, row + 1)`` in continuous
image coordinates; its center is ``(col + 0.5, row + 0.5)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import BehindCamera, NonFinite, NonPositiveScale

BEHIND_EPS = 1e-12


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFinite(f"non-finite value {v!r}")


@dataclass(frozen=True, slots=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check_finite(self.x, self.y, self.z)

    @classmethod
    def of(cls, v: "Vec3 | Sequence[float] | np.ndarray") -> "Vec3":
        if isinstance(v, Vec3):
            return v
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)

    def __iter__(self) -> Iterator[float]:
        yield self.x
        yield self.y
        yield self.z

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


ZERO = Vec3(0.0, 0.0, 0.0)
ONES = Vec3(1.0, 1.0, 1.0)


@dataclass(frozen=True, slots=True)
class Rotation:
    """Unit quaternion ``(w, x, y, z)``, normalized on construction."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self) -> None:
        w, x, y, z = (float(self.w), float(self.x), float(self.y), float(self.z))
        _check_finite(w, x, y, z)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise NonFinite("zero quaternion")
        object.__setattr__(self, "w", w / n)
        object.__setattr__(self, "x", x / n)
        object.__setattr__(self, "y", y / n)
        object.__setattr__(self, "z", z / n)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        ax = np.asarray(axis, dtype=np.float64)
        n = float(np.linalg.norm(ax))
        if n < 1e-12:
            return cls.identity()
        ax = ax / n
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), ax[0] * s, ax[1] * s, ax[2] * s)

    @classmethod
    def from_yaw_pitch_roll(
        cls, yaw: float, pitch: float = 0.0, roll: float = 0.0, degrees: bool = False
    ) -> "Rotation":
        """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; yaw is counter-clockwise seen from +Z."""
        if degrees:
            yaw, pitch, roll = map(math.radians, (yaw, pitch, roll))
        qz = cls.from_axis_angle((0, 0, 1), yaw)
        qy = cls.from_axis_angle((0, 1, 0), pitch)
        qx = cls.from_axis_angle((1, 0, 0), roll)
        return qz * qy * qx

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=np.float64)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(w, x, y, z)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    def apply(self, v: "Vec3 | Sequence[float]") -> Vec3:
        return Vec3.of(self.matrix() @ np.asarray(tuple(v), dtype=np.float64))

    def __mul__(self, other: "Rotation") -> "Rotation":
        a, b = self, other
        return Rotation(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def dot(self, other: "Rotation") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians between two orientations."""
        d = min(1.0, abs(self.dot(other)))
        return 2.0 * math.acos(d)

    def slerp(self, other: "Rotation", t: float) -> "Rotation":
        """Shortest-arc spherical interpolation; ``t=0`` gives self, ``t=1`` other."""
        if t == 0.0:
            return self
        if t == 1.0:
            return other
        d = self.dot(other)
        b = other.as_tuple()
        if d < 0.0:
            d = -d
            b = tuple(-c for c in b)
        a = self.as_tuple()
        if d > 0.9999995:
            return Rotation(*(ai + t * (bi - ai) for ai, bi in zip(a, b)))
        theta = math.acos(d)
        s = math.sin(theta)
        wa = math.sin((1.0 - t) * theta) / s
        wb = math.sin(t * theta) / s
        return Rotation(*(wa * ai + wb * bi for ai, bi in zip(a, b)))

    def yaw(self) -> float:
        """Heading of the rotated +X axis in the ground plane, radians."""
        m = self.matrix()
        return math.atan2(m[1, 0], m[0, 0])


@dataclass(frozen=True, slots=True)
class Transform:
    """Scale, then rotate, then translate."""

    translation: Vec3 = ZERO
    rotation: Rotation = Rotation()
    scale: Vec3 = ONES

    def __post_init__(self) -> None:
        if min(self.scale) <= 0.0:
            raise NonPositiveScale(f"scale must be strictly positive, got {tuple(self.scale)}")

    def apply(self, q: "Vec3 | Sequence[float]") -> Vec3:
        return Vec3.of(self.apply_array(np.asarray(tuple(q), dtype=np.float64)[None, :])[0])

    def apply_array(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts * self.scale.as_array()) @ self.rotation.matrix().T + self.translation.as_array()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix() * self.scale.as_array()[None, :]
        m[:3, 3] = self.translation.as_array()
        return m

    def compose(self, inner: "Transform") -> "Transform":
        """``self ∘ inner``. Exact when this transform's scale is uniform."""
        return Transform(
            self.apply(inner.translation),
            self.rotation * inner.rotation,
            Vec3(*(a * b for a, b in zip(self.scale, inner.scale))),
        )

    def with_translation(self, p: Vec3) -> "Transform":
        return Transform(p, self.rotation, self.scale)


def compose_transform(position, rotation: Rotation | None = None, scale=None) -> Transform:
    position = Vec3.of(position)
    rotation = rotation if rotation is not None else Rotation.identity()
    scale = ONES if scale is None else scale
    scale = Vec3.of(scale)
    return Transform(position, rotation, scale)


@dataclass(frozen=True, slots=True)
class Obb:
    center: Vec3
    half_extents: Vec3

    def __post_init__(self) -> None:
        if min(self.half_extents) <= 0.0:
            raise NonPositiveScale(f"half extents must be positive, got {tuple(self.half_extents)}")

    @property
    def dims(self) -> Vec3:
        return self.half_extents * 2.0

    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    def local_corners(self) -> np.ndarray:
        """8×3 array; corner ``i`` takes ``+h`` on axis ``k`` when bit ``k`` of ``i`` is set."""
        c = self.center.as_array()
        h = self.half_extents.as_array()
        signs = np.array([[1 if i >> k & 1 else -1 for k in range(3)] for i in range(8)], dtype=np.float64)
        return c + signs * h

    def local_bottom_center(self) -> Vec3:
        return Vec3(self.center.x, self.center.y, self.center.z - self.half_extents.z)


def obb_world_corners_array(obb: Obb, t: Transform) -> np.ndarray:
    return t.apply_array(obb.local_corners())


def obb_world_corners(obb: Obb, t: Transform) -> list[Vec3]:
    return [Vec3.of(row) for row in obb_world_corners_array(obb, t)]


def bottom_center(obb: Obb, t: Transform) -> Vec3:
    return t.apply(obb.local_bottom_center())


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        _check_finite(self.fx, self.fy, self.cx, self.cy)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, k: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * k, self.fy * k, self.cx * k, self.cy * k,
            int(round(self.width * k)), int(round(self.height * k)),
        )


@dataclass(frozen=True, slots=True)
class CameraPose:
    """World-to-camera rigid transform: ``x_cam = R @ x_world + t``."""

    rotation: Rotation = Rotation()
    translation: Vec3 = ZERO

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        eye = np.asarray(tuple(eye), dtype=np.float64)
        target = np.asarray(tuple(target), dtype=np.float64)
        f = target - eye
        f = f / np.linalg.norm(f)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(f, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight along the up hint
            right = np.cross(f, np.array([0.0, 1.0, 0.0]))
            if np.linalg.norm(right) < 1e-9:
                right = np.cross(f, np.array([1.0, 0.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(f, right)
        r = np.stack([right, down, f])
        rot = Rotation.from_matrix(r)
        t = -(rot.matrix() @ eye)
        return cls(rot, Vec3.of(t))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation.as_array()
        return m

    def center(self) -> Vec3:
        r = self.rotation.matrix()
        return Vec3.of(-(r.T @ self.translation.as_array()))

    def forward(self) -> np.ndarray:
        """Viewing direction (+Z of the camera) in world coordinates."""
        return self.rotation.matrix()[2].copy()

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.matrix().T + self.translation.as_array()


def project(K: CameraIntrinsics, E: CameraPose, p_world) -> tuple[float, float]:
    """Pinhole projection of one world point to continuous pixel coordinates."""
    pc = E.to_camera(np.asarray(tuple(p_world), dtype=np.float64)[None, :])[0]
    z = float(pc[2])
    if z <= BEHIND_EPS:
        raise BehindCamera(f"point at camera depth {z}")
    return (K.fx * float(pc[0]) / z + K.cx, K.fy * float(pc[1]) / z + K.cy)


def project_array(K: CameraIntrinsics, E: CameraPose, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns ``(uv, z_cam)``. Rows with ``z_cam <= 0`` are garbage."""
    pc = E.to_camera(pts)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * pc[:, 0] / z + K.cx
        v = K.fy * pc[:, 1] / z + K.cy
    return np.stack([u, v], axis=1), z


def unproject(K: CameraIntrinsics, E: CameraPose, u: Sequence[float], z_cam: float) -> Vec3:
    x = (u[0] - K.cx) / K.fx * z_cam
    y = (u[1] - K.cy) / K.fy * z_cam
    pc = np.array([x, y, z_cam]) - E.translation.as_array()
    return Vec3.of(E.rotation.matrix().T @ pc)
