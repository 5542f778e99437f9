"""Metric initialization: constrained trimmed ICP, translation-only PnP and
interaction-onset-frame detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateSource,
    DimensionMismatch,
    TooFewPoints,
)
from .sdf import closest_mesh_points
from .geometry import (
    BinaryMask,
    CameraIntrinsics,
    PointCloud,
    project,
    projection_jacobian,
    quat_to_mat,
)

DEFAULT_TRIM_FRACTION = 0.8
DEFAULT_BORDER_MARGIN = 2
IOF_TAU = 0.025
IOF_EPS = 1e-8
_CONV_RMS = 1e-6


@dataclass
class ScaleAlignResult:
    scale: float
    translation: np.ndarray
    rms: float
    inlier_fraction: float


@dataclass
class OnsetResult:
    frame_index: int
    motion_ratios: np.ndarray


def trimmed_icp_scale(
    source: np.ndarray,
    target: np.ndarray,
    fixed_rotation: np.ndarray,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
    max_iters: int = 50,
    init_translation: np.ndarray | None = None,
) -> ScaleAlignResult:
    """Scale + translation alignment of source onto target with R fixed.

    Each iteration: nearest-neighbor correspondences, keep the best
    ``trim_fraction`` by residual, closed-form joint (s, t) update.
    ``fixed_rotation`` is a unit quaternion (w, x, y, z). ``target`` may be a
    triangle mesh, in which case correspondences are exact closest surface
    points instead of nearest cloud points.
    """
    src = np.asarray(getattr(source, "points", source), dtype=np.float64).reshape(-1, 3)
    target_mesh = target if hasattr(target, "faces") else None
    if target_mesh is not None:
        tgt = np.asarray(target_mesh.vertices, dtype=np.float64)
    else:
        tgt = np.asarray(getattr(target, "points", target), dtype=np.float64).reshape(-1, 3)
    if len(src) < 10 or (target_mesh is None and len(tgt) < 10):
        raise TooFewPoints("both clouds need at least 10 points")
    if target_mesh is not None and len(target_mesh.faces) == 0:
        raise TooFewPoints("target mesh has no faces")
    if not (0 < trim_fraction <= 1):
        raise ValueError("trim_fraction must be in (0, 1]")
    R = quat_to_mat(fixed_rotation)
    p = src @ R.T  # rotation applied once; only (s, t) left
    if np.linalg.norm(p - p.mean(axis=0)) < 1e-12:
        raise DegenerateSource("source has zero spread")

    if target_mesh is not None:
        fv = tgt[target_mesh.faces]
        face_normals = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
        norms = np.linalg.norm(face_normals, axis=1)
        face_normals = face_normals / np.where(norms > 0, norms, 1.0)[:, None]

        def correspond(moved):
            feet, dist = closest_mesh_points(moved, target_mesh)
            return dist, feet
    else:
        tree = cKDTree(tgt)

        def correspond(moved):
            dist, idx = tree.query(moved)
            return dist, tgt[idx]

    n_keep = max(4, int(np.floor(trim_fraction * len(p))))

    def p2p_phases(s0, t0):
        s = s0
        t = np.asarray(t0, dtype=np.float64).copy()
        rms = np.inf
        # Translation-only pre-alignment: registering with s frozen is far
        # better conditioned and lands the joint stage inside the right basin.
        for solve_scale in (False, True):
            prev_rms = np.inf
            for _ in range(max_iters):
                moved = s * p + t
                dist, corr = correspond(moved)
                keep = np.argsort(dist)[:n_keep]
                pk = p[keep]
                qk = corr[keep]
                pbar = pk.mean(axis=0)
                qbar = qk.mean(axis=0)
                if solve_scale:
                    pc = pk - pbar
                    denom = float(np.einsum("ij,ij->", pc, pc))
                    if denom < 1e-18:
                        raise DegenerateSource("kept subset has zero spread")
                    s = float(np.einsum("ij,ij->", pc, qk - qbar)) / denom
                t = qbar - s * pbar
                resid = s * pk + t - qk
                rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
                if abs(prev_rms - rms) < _CONV_RMS:
                    break
                prev_rms = rms
        return s, t, rms

    def run(s0, t0):
        s, t, rms = p2p_phases(s0, t0)
        if target_mesh is not None:
            s2, t2 = refine_point_to_plane(s, t)
            # Point-to-plane leaves translation free along residual-free
            # sliding directions, so re-center with point-to-point before
            # comparing residuals on equal footing.
            s2, t2, rms2 = p2p_phases(s2, t2)
            if rms2 < rms:
                s, t, rms = s2, t2, rms2
        return s, t, rms

    def refine_point_to_plane(s, t):
        # Point-to-point updates creep when the source must slide along the
        # surface; the point-to-plane solve converges there in a few steps.
        # Flat regions make it rank-deficient (sliding is residual-free), so
        # an ill-conditioned or diverging solve keeps the incoming fit.
        for _ in range(30):
            moved = s * p + t
            feet, dist, fids = closest_mesh_points(moved, target_mesh, return_faces=True)
            keep = np.argsort(dist)[:n_keep]
            n_k = face_normals[fids[keep]]
            A = np.concatenate([np.einsum("ij,ij->i", n_k, p[keep])[:, None], n_k], axis=1)
            b = np.einsum("ij,ij->i", n_k, feet[keep])
            sv = np.linalg.svd(A, compute_uv=False)
            if sv[-1] < 1e-6 * sv[0]:
                break
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            s_new, t_new = float(sol[0]), sol[1:4]
            if s_new <= 0 or abs(s_new - s) > 0.3 * abs(s):
                break
            converged = abs(s_new - s) < 1e-9 and float(np.max(np.abs(t_new - t))) < 1e-9
            s, t = s_new, t_new
            if converged:
                break
        return s, t

    src_spread = float(np.sqrt(np.mean(np.sum((p - p.mean(axis=0)) ** 2, axis=1))))
    tgt_spread = float(np.sqrt(np.mean(np.sum((tgt - tgt.mean(axis=0)) ** 2, axis=1))))
    if init_translation is not None:
        # a caller-provided start is trusted over residual-based selection:
        # with heavy occlusion the lowest-residual run can be a shrunk fit
        candidates = [(1.0, np.asarray(init_translation, dtype=np.float64))]
    else:
        # Multi-start over deterministic (scale, translation) candidates. When
        # the source covers only part of the target surface its median sits
        # off the target median by a fraction of the extent, and a single
        # start can settle in a shrunk local minimum; medians (not means) also
        # keep gross outliers from wrecking the base candidate. The scale is
        # seeded by a coarse grid, since the joint descent only finds the true
        # scale from inside its basin: around the spread ratio when source and
        # target cover comparable geometry (cloud targets), around 1 for mesh
        # targets, where the source is typically a partial view whose spread
        # says little about scale.
        if target_mesh is not None:
            s_base = 1.0
        else:
            s_base = float(np.clip(tgt_spread / src_spread, 0.3, 3.0))
        extent = tgt.max(axis=0) - tgt.min(axis=0)

        def base_t(s0):
            return np.median(tgt, axis=0) - s0 * np.median(p, axis=0)

        candidates = [(s_base, base_t(s_base))]
        for axis in range(3):
            for sign in (1.0, -1.0):
                off = np.zeros(3)
                off[axis] = sign * 0.25 * extent[axis]
                candidates.append((s_base, base_t(s_base) + off))
        for mult in (0.8, 1.25):
            candidates.append((mult * s_base, base_t(mult * s_base)))
    # A solution that shrinks the source onto a single target point reaches
    # zero residual; reject any run whose mapped spread collapses.
    best = None
    for s0, t0 in candidates:
        s, t, rms = run(s0, t0)
        if s <= 0 or s * src_spread < 0.1 * tgt_spread:
            continue
        if best is None or rms < best[2]:
            best = (s, t, rms)
    if best is None:
        raise DegenerateSource("every start collapsed the source onto a point")
    s, t, rms = best
    return ScaleAlignResult(
        scale=s,
        translation=np.asarray(t),
        rms=rms,
        inlier_fraction=n_keep / len(p),
    )


def pnp_translation(
    joints3d: np.ndarray,
    joints2d: np.ndarray,
    K: CameraIntrinsics,
    fixed_rotation: np.ndarray,
    scale: float = 1.0,
    gn_iters: int = 20,
) -> np.ndarray:
    """Translation-only PnP: linear algebraic solve + Gauss-Newton refinement.

    Solves project(scale * R @ x_i + T) = u_i for T with R, scale, K fixed.
    """
    x = np.asarray(joints3d, dtype=np.float64).reshape(-1, 3)
    u = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    if len(x) != len(u):
        raise DimensionMismatch("joint count mismatch")
    valid = np.isfinite(x).all(axis=1) & np.isfinite(u).all(axis=1)
    x, u = x[valid], u[valid]
    if len(x) < 3:
        raise DegenerateConfiguration("need >= 3 valid joints")
    spread = x - x.mean(axis=0)
    if np.linalg.svd(spread, compute_uv=False)[1] < 1e-12:
        raise DegenerateConfiguration("joints are collinear")

    a = scale * (x @ quat_to_mat(fixed_rotation).T)
    # Cross-multiplied projection equations, linear in T:
    #   fx (ax + Tx) + (cx - u)(az + Tz) = 0, and the v row analogously.
    n = len(a)
    A = np.zeros((2 * n, 3))
    b = np.zeros(2 * n)
    A[0::2, 0] = K.fx
    A[0::2, 2] = K.cx - u[:, 0]
    b[0::2] = -(K.fx * a[:, 0] + (K.cx - u[:, 0]) * a[:, 2])
    A[1::2, 1] = K.fy
    A[1::2, 2] = K.cy - u[:, 1]
    b[1::2] = -(K.fy * a[:, 1] + (K.cy - u[:, 1]) * a[:, 2])
    T, *_ = np.linalg.lstsq(A, b, rcond=None)

    if np.any(a[:, 2] + T[2] <= 0):
        # push in front of the camera before refining
        T[2] = -a[:, 2].min() + 0.1
        if np.any(a[:, 2] + T[2] <= 0):
            raise BehindCamera("no positive-depth solution")

    def mse(T):
        return float(np.mean(np.sum((project(K, a + T) - u) ** 2, axis=1)))

    best = mse(T)
    for _ in range(gn_iters):
        pts = a + T
        r = (project(K, pts) - u).reshape(-1)
        J = np.concatenate([projection_jacobian(K, p) for p in pts], axis=0)
        JtJ = J.T @ J
        try:
            step = np.linalg.solve(JtJ + 1e-12 * np.eye(3), -J.T @ r)
        except np.linalg.LinAlgError:
            break
        cand = T + step
        if np.any(a[:, 2] + cand[2] <= 0):
            break
        err = mse(cand)
        if err > best + 1e-18:
            break
        T = cand
        if best - err < 1e-16:
            best = err
            break
        best = err
    if np.any(a[:, 2] + T[2] <= 0):
        raise BehindCamera("no positive-depth solution")
    return T


def iof_motion_ratios(
    obj_masks: list[BinaryMask], hand_masks: list[BinaryMask], eps: float = IOF_EPS
) -> np.ndarray:
    """r_i over consecutive transitions: hand-independent object-mask change
    normalized by object area."""
    n = len(obj_masks)
    if n != len(hand_masks) or n < 2:
        raise DimensionMismatch("mask sequences must match and have length >= 2")
    shape = obj_masks[0].bits.shape
    for m in list(obj_masks) + list(hand_masks):
        if m.bits.shape != shape:
            raise DimensionMismatch("mask dimensions differ within sequence")
    r = np.empty(n - 1)
    for i in range(n - 1):
        mo0 = obj_masks[i].bits.astype(np.int64)
        mo1 = obj_masks[i + 1].bits.astype(np.int64)
        mh0 = hand_masks[i].bits.astype(np.int64)
        mh1 = hand_masks[i + 1].bits.astype(np.int64)
        num = np.abs((mo1 - mo0) * (1 - mh1) * (1 - mh0)).sum()
        r[i] = num / (mo0.sum() + eps)
    return r


def _touches_border(mask: BinaryMask, margin: int) -> bool:
    b = mask.bits
    if margin <= 0:
        return False
    return bool(
        b[:margin, :].any()
        or b[-margin:, :].any()
        or b[:, :margin].any()
        or b[:, -margin:].any()
    )


def detect_iof(
    obj_masks: list[BinaryMask],
    hand_masks: list[BinaryMask],
    tau: float = IOF_TAU,
    border_margin: int = DEFAULT_BORDER_MARGIN,
) -> OnsetResult:
    """First frame whose transition ratio exceeds tau with the object mask
    clear of the image border; falls back to frame 0."""
    r = iof_motion_ratios(obj_masks, hand_masks)
    for i in range(len(r)):
        if r[i] > tau and not _touches_border(obj_masks[i], border_margin):
            return OnsetResult(frame_index=i, motion_ratios=r)
    return OnsetResult(frame_index=0, motion_ratios=r)


def aggregate_object_scale(
    per_frame: list[ScaleAlignResult | None],
    obj_masks: list[BinaryMask],
    hand_masks: list[BinaryMask],
    min_area_px: int = 1000,
    max_hand_overlap: float = 0.3,
) -> float:
    """Median of per-frame ICP scales over well-observed frames."""
    scales = []
    for res, mo, mh in zip(per_frame, obj_masks, hand_masks):
        if res is None:
            continue
        area = mo.area()
        if area < min_area_px:
            continue
        overlap = int((mo.bits & mh.bits).sum()) / max(area, 1)
        if overlap >= max_hand_overlap:
            continue
        scales.append(res.scale)
    if not scales:
        scales = [res.scale for res in per_frame if res is not None]
    if not scales:
        raise TooFewPoints("no usable frames for scale aggregation")
    return float(np.median(scales))
