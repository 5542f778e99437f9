"""Loss terms of the composite tracking objective.

Point-based terms (joint reprojection, interaction stability) carry analytic
gradients; image-based terms (mask, semantic feature) are differentiated by
the optimizer's finite-difference provider.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DimensionMismatch, LengthMismatch
from .geometry import (
    AnisoScale,
    BinaryMask,
    CameraIntrinsics,
    RigidPose,
    apply_pose,
    project,
    projection_jacobian,
    quat_to_mat,
    so3_exp,
    so3_right_jacobian,
)
from .rasterizer import VISIBLE, SilhouetteRender
from .sdf import SdfGrid, query

DEFAULT_MAX_INTERACT_DIST = 0.05  # meters
DEFAULT_ATTRACT_BAND = 0.01  # meters
DEFAULT_PENETRATION_WEIGHT = 10.0


@dataclass
class LossWeights:
    w_mask: float = 5.0
    w_dino: float = 10.0
    w_interact: float = 400.0  # 200 for the DexYCB-style preset
    w_contact: float = 5.0
    interact_max_dist: float = DEFAULT_MAX_INTERACT_DIST

    def __post_init__(self):
        if min(self.w_mask, self.w_dino, self.w_interact, self.w_contact) < 0:
            raise ValueError("loss weights must be non-negative")

    @staticmethod
    def preset(name: str) -> "LossWeights":
        if name == "ho3d":
            return LossWeights(w_interact=400.0)
        if name == "dexycb":
            return LossWeights(w_interact=200.0)
        raise ValueError(f"unknown weight preset {name!r}")


@dataclass
class FeatureGrid:
    values: np.ndarray  # (hf, wf, C); rows unit-norm or zero (background)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionMismatch("feature grid must be (hf, wf, C)")

    @property
    def hf(self):
        return self.values.shape[0]

    @property
    def wf(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass
class CanonicalSamples:
    points: np.ndarray  # (Np, 3) canonical, pre-scale
    descriptors: np.ndarray  # (Np, C) unit vectors
    similarity_maps: np.ndarray  # (Np, hf, wf), values in [-1, 1]

    def __post_init__(self):
        n = len(self.points)
        if len(self.descriptors) != n or len(self.similarity_maps) != n:
            raise LengthMismatch("points/descriptors/similarity maps disagree")


def similarity_maps(descriptors: np.ndarray, grid: FeatureGrid) -> np.ndarray:
    """Cosine similarity of each descriptor against every grid cell."""
    return np.einsum("hwc,nc->nhw", grid.values, np.asarray(descriptors))


def joint_reproj_loss(
    joints3d: np.ndarray, joints2d: np.ndarray, K: CameraIntrinsics
):
    """Mean squared pixel error of projected joints; gradient w.r.t. a common
    translation of all joints."""
    j3 = np.asarray(joints3d, dtype=np.float64).reshape(-1, 3)
    j2 = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    if len(j3) != len(j2):
        raise LengthMismatch("joint count mismatch")
    if np.any(j3[:, 2] <= 0):
        raise BehindCamera("joint behind camera")
    resid = project(K, j3) - j2
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    grad = np.zeros(3)
    for p, r in zip(j3, resid):
        grad += 2.0 * projection_jacobian(K, p).T @ r
    return loss, grad / len(j3)


def _nn_resample(bits: np.ndarray, shape: tuple) -> np.ndarray:
    if bits.shape == shape:
        return bits
    h, w = shape
    vs = np.minimum((np.arange(h) * bits.shape[0] / h).astype(int), bits.shape[0] - 1)
    us = np.minimum((np.arange(w) * bits.shape[1] / w).astype(int), bits.shape[1] - 1)
    return bits[np.ix_(vs, us)]


def mask_loss(render: SilhouetteRender, gt: BinaryMask, ignore: BinaryMask | None = None) -> float:
    """Mean per-pixel squared difference between alpha and the binary mask.

    The ground-truth mask is nearest-neighbor resampled if resolutions
    differ. ``ignore`` marks pixels excluded from the mean — the visible
    object mask says nothing about the silhouette behind an occluder there.
    """
    alpha = render.alpha
    bits = _nn_resample(gt.bits, alpha.shape)
    sq = (alpha - bits) ** 2
    if ignore is None:
        return float(np.mean(sq))
    keep = _nn_resample(ignore.bits, alpha.shape) == 0
    if not keep.any():
        return 0.0
    return float(np.mean(sq[keep]))


def _bilinear(maps: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Per-map bilinear sample: maps (N, hf, wf) at (us[i], vs[i])."""
    _, hf, wf = maps.shape
    u = np.clip(us, 0.0, wf - 1.0)
    v = np.clip(vs, 0.0, hf - 1.0)
    u0 = np.minimum(np.floor(u).astype(int), wf - 2) if wf > 1 else np.zeros(len(u), int)
    v0 = np.minimum(np.floor(v).astype(int), hf - 2) if hf > 1 else np.zeros(len(v), int)
    du = u - u0
    dv = v - v0
    idx = np.arange(len(maps))
    u1 = np.minimum(u0 + 1, wf - 1)
    v1 = np.minimum(v0 + 1, hf - 1)
    return (
        maps[idx, v0, u0] * (1 - du) * (1 - dv)
        + maps[idx, v0, u1] * du * (1 - dv)
        + maps[idx, v1, u0] * (1 - du) * dv
        + maps[idx, v1, u1] * du * dv
    )


def dino_loss(
    samples: CanonicalSamples,
    pose: RigidPose,
    scale: AnisoScale,
    K: CameraIntrinsics,
    visibility: np.ndarray,
    feat_dims: tuple,
    image_dims: tuple,
) -> float:
    """Negative mean similarity at the projected locations of visible samples."""
    hf, wf = feat_dims
    width, height = image_dims
    vis = np.asarray(visibility) == VISIBLE
    if not vis.any():
        return 0.0
    pts = apply_pose(pose, scale, samples.points[vis])
    if np.any(pts[:, 2] <= 0):
        vis_idx = np.nonzero(vis)[0][pts[:, 2] > 0]
        if not len(vis_idx):
            return 0.0
        keep = pts[:, 2] > 0
        pts = pts[keep]
        maps = samples.similarity_maps[vis_idx]
    else:
        maps = samples.similarity_maps[vis]
    uv = project(K, pts)
    us = uv[:, 0] * (wf / width)
    vs = uv[:, 1] * (hf / height)
    return float(-np.mean(_bilinear(maps, us, vs)))


def interact_loss(
    hand_verts_t: np.ndarray,
    pose_t: RigidPose,
    prev_local: np.ndarray,
    weights: np.ndarray,
    max_dist: float = DEFAULT_MAX_INTERACT_DIST,
    distances: np.ndarray | None = None,
) -> float:
    """Mean weighted displacement of hand vertices in the object frame.

    ``prev_local`` are the cached object-frame hand coordinates of the
    previous processed frame; ``distances`` are the previous-frame surface
    distances used for the hard participation cutoff.
    """
    v = np.asarray(hand_verts_t, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(prev_local, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not (len(v) == len(p) == len(w)):
        raise LengthMismatch("hand verts / cache / weights length mismatch")
    if distances is not None:
        w = np.where(np.asarray(distances) > max_dist, 0.0, w)
    local = (v - pose_t.translation) @ pose_t.matrix
    return float(np.mean(w * np.linalg.norm(local - p, axis=1)))


def interact_loss_grad(
    hand_verts_t: np.ndarray,
    rot_base: np.ndarray,
    rot_delta: np.ndarray,
    translation: np.ndarray,
    prev_local: np.ndarray,
    weights: np.ndarray,
    max_dist: float = DEFAULT_MAX_INTERACT_DIST,
    distances: np.ndarray | None = None,
):
    """Loss + analytic gradients for R = R_base exp([delta]x).

    Returns (loss, d/d_delta, d/d_T, d/d_hand_T).
    """
    v = np.asarray(hand_verts_t, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(prev_local, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if distances is not None:
        w = np.where(np.asarray(distances) > max_dist, 0.0, w)
    R = quat_to_mat(rot_base) @ so3_exp(rot_delta)
    a = (v - translation) @ R  # object-frame coords
    diff = a - p
    norms = np.linalg.norm(diff, axis=1)
    loss = float(np.mean(w * norms))
    safe = norms > 1e-12
    e = np.zeros_like(diff)
    e[safe] = diff[safe] / norms[safe, None]
    we = (w[:, None] * e) / len(v)
    grad_delta = so3_right_jacobian(rot_delta).T @ np.sum(np.cross(we, a), axis=0)
    grad_T = -R @ we.sum(axis=0)
    grad_hand = -grad_T
    return loss, grad_delta, grad_T, grad_hand


def contact_loss(
    hand_verts_local: np.ndarray,
    sdf: SdfGrid,
    attract_band: float = DEFAULT_ATTRACT_BAND,
    penetration_weight: float = DEFAULT_PENETRATION_WEIGHT,
) -> float:
    """Push penetrating vertices out, pull near-band vertices onto the surface."""
    phi = query(sdf, np.atleast_2d(hand_verts_local))
    pen = penetration_weight * np.maximum(0.0, -phi)
    attract = np.where((phi > 0) & (phi < attract_band), phi, 0.0)
    return float(np.mean(pen + attract))


def composite_object_loss(
    l_mask: float,
    l_dino: float,
    l_interact: float,
    weights: LossWeights,
    l_contact: float | None = None,
) -> float:
    """Weighted sum; the contact term participates only in onset-frame mode."""
    total = (
        weights.w_mask * l_mask
        + weights.w_dino * l_dino
        + weights.w_interact * l_interact
    )
    if l_contact is not None:
        total += weights.w_contact * l_contact
    return float(total)
