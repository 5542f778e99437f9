"""Soft silhouette / depth rendering and point visibility classification.

The soft edge model is a sigmoid of the signed pixel distance to the
projected silhouette boundary: hard coverage decides the sign, the distance
is measured against densely resampled silhouette edges (edges whose two
faces disagree in facing, plus open-boundary edges). Because edge samples
move continuously with the pose, the alpha map is smooth enough for
central-difference gradients at sub-pixel steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch
from .geometry import AnisoScale, BinaryMask, CameraIntrinsics, RigidPose, TriMesh, apply_pose

DEFAULT_SHARPNESS = 1.0  # px^-1
_SIGMOID_CLIP = 60.0
DEFAULT_DEPTH_EPS = 0.005  # meters
DEFAULT_MAX_RENDER_PX = 160
_EDGE_SAMPLE_SPACING = 0.5  # px
_NEAR = 1e-6

VISIBLE = 0
SELF_OCCLUDED = 1
HAND_OCCLUDED = 2


@dataclass
class SilhouetteRender:
    alpha: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray  # (H, W) meters, +inf where empty


def _rasterize_hard(pts2d, z, faces, width, height):
    """Coverage mask and z-buffer at pixel centers (integer coordinates)."""
    cover = np.zeros((height, width), dtype=bool)
    zbuf = np.full((height, width), np.inf)
    inv_z = 1.0 / z
    for f in faces:
        tri = pts2d[f]
        u0 = max(int(np.ceil(tri[:, 0].min())), 0)
        u1 = min(int(np.floor(tri[:, 0].max())), width - 1)
        v0 = max(int(np.ceil(tri[:, 1].min())), 0)
        v1 = min(int(np.floor(tri[:, 1].max())), height - 1)
        if u0 > u1 or v0 > v1:
            continue
        d = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (
            tri[1, 1] - tri[0, 1]
        ) * (tri[2, 0] - tri[0, 0])
        if abs(d) < 1e-12:
            continue
        gu, gv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1), indexing="xy")
        l1 = (
            (gu - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (gv - tri[0, 1]) * (tri[2, 0] - tri[0, 0])
        ) / d
        l2 = (
            (gv - tri[0, 1]) * (tri[1, 0] - tri[0, 0])
            - (gu - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
        ) / d
        l0 = 1.0 - l1 - l2
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not hit.any():
            continue
        # Perspective-correct depth: 1/z interpolates linearly in screen space.
        izz = l0 * inv_z[f[0]] + l1 * inv_z[f[1]] + l2 * inv_z[f[2]]
        zz = np.where(izz > 0, 1.0 / np.maximum(izz, 1e-12), np.inf)
        sl = (slice(v0, v1 + 1), slice(u0, u1 + 1))
        closer = hit & (zz < zbuf[sl])
        cover[sl] |= hit
        zbuf[sl] = np.where(closer, zz, zbuf[sl])
    return cover, zbuf


def _silhouette_edges(mesh: TriMesh, verts_cam, faces):
    """2-D segments of edges where facing flips, plus open-boundary edges."""
    a = verts_cam[faces[:, 0]]
    b = verts_cam[faces[:, 1]]
    c = verts_cam[faces[:, 2]]
    normals = np.cross(b - a, c - a)
    centroid = (a + b + c) / 3.0
    front = np.einsum("ij,ij->i", normals, centroid) < 0
    edge_faces = {}
    for fi, f in enumerate(faces):
        for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(e), max(e))
            edge_faces.setdefault(key, []).append(fi)
    sil = []
    for key, fl in edge_faces.items():
        if len(fl) == 1 or (len(fl) == 2 and front[fl[0]] != front[fl[1]]):
            sil.append(key)
    return sil


def _sample_segments(p0s, p1s, spacing):
    pts = []
    for p0, p1 in zip(p0s, p1s):
        length = np.linalg.norm(p1 - p0)
        n = max(1, int(np.ceil(length / spacing)))
        t = np.arange(n + 1) / n
        pts.append(p0 + np.outer(t, p1 - p0))
    return np.concatenate(pts, axis=0)


def render_silhouette(
    mesh: TriMesh,
    pose: RigidPose,
    scale: AnisoScale,
    K: CameraIntrinsics,
    sharpness: float = DEFAULT_SHARPNESS,
) -> SilhouetteRender:
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    if not len(mesh.faces):
        raise ValueError("mesh is empty")
    w, h = K.width, K.height
    verts_cam = apply_pose(pose, scale, mesh.vertices)
    valid = verts_cam[:, 2] > _NEAR
    keep = valid[mesh.faces].all(axis=1)
    faces = mesh.faces[keep]
    if not len(faces):
        return SilhouetteRender(np.zeros((h, w)), np.full((h, w), np.inf))

    z = verts_cam[:, 2]
    pts2d = np.full((len(verts_cam), 2), np.nan)
    pts2d[valid, 0] = K.fx * verts_cam[valid, 0] / z[valid] + K.cx
    pts2d[valid, 1] = K.fy * verts_cam[valid, 1] / z[valid] + K.cy

    cover, zbuf = _rasterize_hard(pts2d, z, faces, w, h)

    sil = _silhouette_edges(mesh, verts_cam, faces)
    sil = [(i, j) for (i, j) in sil if valid[i] and valid[j]]
    if not sil:
        return SilhouetteRender(cover.astype(np.float64), zbuf)
    e = np.asarray(sil)
    samples = _sample_segments(pts2d[e[:, 0]], pts2d[e[:, 1]], _EDGE_SAMPLE_SPACING)
    tree = cKDTree(samples)
    # Beyond the clip distance the sigmoid saturates to the exact clipped
    # value, so the distance query can be limited to a band around the edges.
    margin = _SIGMOID_CLIP / sharpness + 1.0
    u0 = max(int(np.floor(samples[:, 0].min() - margin)), 0)
    u1 = min(int(np.ceil(samples[:, 0].max() + margin)), w - 1)
    v0 = max(int(np.floor(samples[:, 1].min() - margin)), 0)
    v1 = min(int(np.ceil(samples[:, 1].max() + margin)), h - 1)
    signed = np.where(cover, _SIGMOID_CLIP / sharpness, -_SIGMOID_CLIP / sharpness)
    if u0 <= u1 and v0 <= v1:
        gu, gv = np.meshgrid(
            np.arange(u0, u1 + 1, dtype=np.float64),
            np.arange(v0, v1 + 1, dtype=np.float64),
        )
        pix = np.stack([gu.ravel(), gv.ravel()], axis=1)
        dist = tree.query(pix)[0].reshape(v1 - v0 + 1, u1 - u0 + 1)
        box = (slice(v0, v1 + 1), slice(u0, u1 + 1))
        signed[box] = np.where(cover[box], dist, -dist)
    alpha = 1.0 / (1.0 + np.exp(-np.clip(sharpness * signed, -_SIGMOID_CLIP, _SIGMOID_CLIP)))
    return SilhouetteRender(alpha, zbuf)


def classify_points(
    points_cam: np.ndarray,
    render: SilhouetteRender,
    hand_mask: BinaryMask,
    K: CameraIntrinsics,
    depth_eps: float = DEFAULT_DEPTH_EPS,
) -> np.ndarray:
    """Per-point label: VISIBLE, SELF_OCCLUDED or HAND_OCCLUDED."""
    if hand_mask.bits.shape != render.depth.shape:
        raise DimensionMismatch(
            f"hand mask {hand_mask.bits.shape} vs render {render.depth.shape}"
        )
    p = np.atleast_2d(np.asarray(points_cam, dtype=np.float64))
    labels = np.full(len(p), SELF_OCCLUDED, dtype=np.int8)
    ok = p[:, 2] > _NEAR
    if not ok.any():
        return labels
    u = np.round(K.fx * p[ok, 0] / p[ok, 2] + K.cx).astype(int)
    v = np.round(K.fy * p[ok, 1] / p[ok, 2] + K.cy).astype(int)
    infr = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    idx = np.nonzero(ok)[0][infr]
    u, v = u[infr], v[infr]
    behind = p[idx, 2] > render.depth[v, u] + depth_eps
    handed = hand_mask.bits[v, u] > 0
    lab = np.where(behind, SELF_OCCLUDED, np.where(handed, HAND_OCCLUDED, VISIBLE))
    labels[idx] = lab
    return labels


def hard_mask(render: SilhouetteRender) -> np.ndarray:
    return (render.alpha > 0.5).astype(np.uint8)
