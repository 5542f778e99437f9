"""Camera model, rigid transforms, meshes and projection primitives.

Conventions: OpenCV camera frame (x right, y down, z forward), the camera
frame is the world frame. Quaternions are (w, x, y, z), unit norm. Pixel
coordinates are continuous with (cx, cy) the principal point; integer
coordinates address pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMesh, DimensionMismatch, NonPositiveDepth

MIN_DEPTH = 1e-9


# ---------------------------------------------------------------------------
# quaternion / SO(3) helpers


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_mat(q):
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def mat_to_quat(m):
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def so3_exp(v):
    """Rotation matrix of the axis-angle 3-vector v."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    K = skew(v)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1 - np.cos(theta)) / theta**2) * (K @ K)
    )


def so3_exp_quat(v):
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        return quat_normalize(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    axis = v / theta
    return np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])


def so3_right_jacobian(v):
    """Right Jacobian of SO(3): exp(v + dv) ~= exp(v) exp(Jr(v) dv)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    K = skew(v)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    return (
        np.eye(3)
        - ((1 - np.cos(theta)) / theta**2) * K
        + ((theta - np.sin(theta)) / theta**3) * (K @ K)
    )


def rotation_geodesic_deg(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


# ---------------------------------------------------------------------------
# domain types


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
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera at a resampled resolution."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=max(1, int(round(self.width * factor))),
            height=max(1, int(round(self.height * factor))),
        )


@dataclass(frozen=True)
class RigidPose:
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    translation: np.ndarray  # meters

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        n = np.linalg.norm(self.rotation)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} deviates from 1 beyond 1e-6")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_mat(self.rotation)

    def inverse(self) -> "RigidPose":
        Rt = self.matrix.T
        return RigidPose(quat_conj(quat_normalize(self.rotation)), -Rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self applied after other."""
        return RigidPose(
            quat_normalize(quat_mul(self.rotation, other.rotation)),
            self.matrix @ other.translation + self.translation,
        )

    def transform(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self.matrix.T + self.translation


@dataclass(frozen=True)
class AnisoScale:
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        if min(self.sx, self.sy, self.sz) <= 0:
            raise ValueError("scale components must be positive")

    @staticmethod
    def uniform(s: float) -> "AnisoScale":
        return AnisoScale(s, s, s)

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float((self.sx + self.sy + self.sz) / 3.0)


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray  # (F, 3) int

    watertight: bool = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise DegenerateMesh("face index out of range")
        self._drop_degenerate_faces()
        self.watertight = self._check_watertight()

    def _drop_degenerate_faces(self):
        if not len(self.faces):
            return
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
        self.faces = self.faces[area2 > 1e-16]
        if not len(self.faces):
            raise DegenerateMesh("all faces degenerate")

    def _check_watertight(self) -> bool:
        edges = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @property
    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def sample_surface(self, n: int, rng) -> np.ndarray:
        """Area-weighted surface samples; returns (n, 3)."""
        pts, _, _ = self.sample_surface_with_faces(n, rng)
        return pts

    def sample_surface_with_faces(self, n: int, rng):
        areas = self.face_areas()
        probs = areas / areas.sum()
        fids = rng.choice(len(self.faces), size=n, p=probs)
        u = rng.random(n)
        w = rng.random(n)
        flip = u + w > 1
        u[flip] = 1 - u[flip]
        w[flip] = 1 - w[flip]
        v = self.vertices
        tri = self.faces[fids]
        bary = np.stack([1 - u - w, u, w], axis=1)
        pts = (
            v[tri[:, 0]] * bary[:, :1]
            + v[tri[:, 1]] * bary[:, 1:2]
            + v[tri[:, 2]] * bary[:, 2:3]
        )
        return pts, fids, bary

    def diameter(self) -> float:
        lo, hi = self.aabb
        return float(np.linalg.norm(hi - lo))


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) meters

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self):
        return len(self.points)


@dataclass
class DepthMap:
    values: np.ndarray  # (H, W) meters, 0 = invalid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch("depth map must be 2-D")
        if np.any(self.values < 0):
            raise ValueError("negative depth")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class BinaryMask:
    bits: np.ndarray  # (H, W) {0, 1}

    def __post_init__(self):
        self.bits = (np.asarray(self.bits) != 0).astype(np.uint8)
        if self.bits.ndim != 2:
            raise DimensionMismatch("mask must be 2-D")

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class HandFrameObservation:
    """Per-frame posed hand outputs of an external estimator.

    Vertices and joints are camera-aligned and pre-scale/pre-translation:
    the metric hand is ``scale * verts + T_h``.
    """

    vertices: np.ndarray  # (N, 3)
    joints3d: np.ndarray  # (21, 3)
    joints2d: np.ndarray  # (21, 2) pixels
    rotation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.joints3d = np.asarray(self.joints3d, dtype=np.float64)
        self.joints2d = np.asarray(self.joints2d, dtype=np.float64)
        if self.joints3d.shape != (21, 3) or self.joints2d.shape != (21, 2):
            raise DimensionMismatch("hand observations require exactly 21 joints")
        self.rotation = quat_normalize(self.rotation)


# ---------------------------------------------------------------------------
# operations


def project(K: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Perspective projection; pts (N, 3) or (3,) -> pixels (N, 2) or (2,)."""
    p = np.asarray(pts, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    z = p[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise NonPositiveDepth(f"point depth <= {MIN_DEPTH}")
    uv = np.stack([K.fx * p[:, 0] / z + K.cx, K.fy * p[:, 1] / z + K.cy], axis=1)
    return uv[0] if single else uv


def projection_jacobian(K: CameraIntrinsics, p: np.ndarray) -> np.ndarray:
    """d(u,v)/d(x,y,z) of the pinhole projection at a single 3-D point."""
    x, y, z = p
    return np.array(
        [[K.fx / z, 0.0, -K.fx * x / z**2], [0.0, K.fy / z, -K.fy * y / z**2]]
    )


def unproject_masked(depth: DepthMap, mask: BinaryMask, K: CameraIntrinsics) -> PointCloud:
    """One 3-D point per masked pixel with valid (non-zero) depth."""
    if depth.values.shape != mask.bits.shape:
        raise DimensionMismatch(
            f"depth {depth.values.shape} vs mask {mask.bits.shape}"
        )
    vs, us = np.nonzero((mask.bits > 0) & (depth.values > 0))
    d = depth.values[vs, us]
    x = d * (us - K.cx) / K.fx
    y = d * (vs - K.cy) / K.fy
    return PointCloud(np.stack([x, y, d], axis=1))


def apply_pose(pose: RigidPose, scale: AnisoScale, pts: np.ndarray) -> np.ndarray:
    """R (s .* p) + T, vectorized over points."""
    p = np.asarray(pts, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = (p * scale.vec) @ pose.matrix.T + pose.translation
    return out[0] if single else out


def inverse_pose_map(pose: RigidPose, scale: AnisoScale, pts: np.ndarray) -> np.ndarray:
    """Companion inverse of apply_pose: (R^T (p - T)) ./ s."""
    p = np.asarray(pts, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = ((p - pose.translation) @ pose.matrix) / scale.vec
    return out[0] if single else out


def to_object_frame(pose: RigidPose, pts: np.ndarray) -> np.ndarray:
    """R^T (p - T): map camera-frame points into the object's local frame."""
    p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return (p - pose.translation) @ pose.matrix
