"""Evaluation protocol: hand joint error, chamfer / F-score object geometry,
hand-relative chamfer, pose errors (ADD/ADDS) and sequence success rate.

Conventions, documented in every emitted report: CD is the sum of both
directional means of squared nearest-neighbor distances, reported in cm^2;
no alignment is applied to predictions before evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyInput, LengthMismatch
from .geometry import RigidPose

MESH_SAMPLE_COUNT = 10_000
ADD_DIAMETER_FRACTION = 0.1

CONVENTIONS = {
    "cd": "sum of both directional means of squared NN distances, cm^2",
    "fscore": "harmonic mean of precision/recall at the distance threshold, percent",
    "mpjpe": "root-relative (joint 0 subtracted), millimeters",
    "alignment": "none applied before evaluation",
    "add_threshold": "10 percent of model diameter",
}


@dataclass
class EvalReport:
    mpjpe_mm: float
    cd_cm2: float
    f5_pct: float
    f10_pct: float
    cdh_cm2: float
    success_rate_pct: float
    rot_err_deg: float
    trans_err_mm: float
    add_pct: float
    adds_pct: float
    per_frame: list = field(default_factory=list)


def mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Root-relative mean per-joint position error in millimeters."""
    p = np.asarray(pred_joints, dtype=np.float64)
    g = np.asarray(gt_joints, dtype=np.float64)
    if p.shape != (21, 3) or g.shape != (21, 3):
        raise LengthMismatch("expected 21x3 joint arrays")
    p = p - p[0]
    g = g - g[0]
    return float(np.mean(np.linalg.norm(p - g, axis=1)) * 1000.0)


def chamfer_fscore(pred: np.ndarray, gt: np.ndarray, thresholds=(0.005, 0.010)):
    """CD in cm^2 plus F-scores (percent) at the given metric thresholds."""
    p = np.asarray(getattr(pred, "points", pred), dtype=np.float64).reshape(-1, 3)
    g = np.asarray(getattr(gt, "points", gt), dtype=np.float64).reshape(-1, 3)
    if not len(p) or not len(g):
        raise EmptyCloud("both clouds need at least one point")
    d_pg = cKDTree(g).query(p)[0]
    d_gp = cKDTree(p).query(g)[0]
    cd_m2 = float(np.mean(d_pg**2) + np.mean(d_gp**2))
    cd_cm2 = cd_m2 * 1e4
    fs = {}
    for tau in thresholds:
        precision = float(np.mean(d_pg < tau))
        recall = float(np.mean(d_gp < tau))
        f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        fs[tau] = f * 100.0
    return cd_cm2, fs


def cd_hand_relative(
    pred_obj: np.ndarray,
    gt_obj: np.ndarray,
    pred_hand_root_pose: RigidPose,
    gt_hand_root_pose: RigidPose,
) -> float:
    """Chamfer after expressing each object cloud in its own hand-root frame."""
    p = np.asarray(getattr(pred_obj, "points", pred_obj), dtype=np.float64).reshape(-1, 3)
    g = np.asarray(getattr(gt_obj, "points", gt_obj), dtype=np.float64).reshape(-1, 3)
    p_local = pred_hand_root_pose.inverse().transform(p)
    g_local = gt_hand_root_pose.inverse().transform(g)
    cd, _ = chamfer_fscore(p_local, g_local)
    return cd


def pose_errors(
    pred_pose: RigidPose,
    gt_pose: RigidPose,
    mesh_vertices: np.ndarray,
    diameter_frac: float = ADD_DIAMETER_FRACTION,
):
    """Geodesic rotation error, translation error and ADD/ADDS pass flags."""
    v = np.asarray(getattr(mesh_vertices, "vertices", mesh_vertices), dtype=np.float64)
    if len(v) < 3:
        raise ValueError("mesh needs >= 3 vertices")
    Rp, Rg = pred_pose.matrix, gt_pose.matrix
    cosang = np.clip((np.trace(Rp.T @ Rg) - 1) / 2, -1.0, 1.0)
    rot_deg = float(np.degrees(np.arccos(cosang)))
    trans_mm = float(np.linalg.norm(pred_pose.translation - gt_pose.translation) * 1000)

    vp = pred_pose.transform(v)
    vg = gt_pose.transform(v)
    diameter = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    thr = diameter_frac * diameter
    add = float(np.mean(np.linalg.norm(vp - vg, axis=1)))
    adds = float(np.mean(cKDTree(vg).query(vp)[0]))
    return {
        "rot_deg": rot_deg,
        "trans_mm": trans_mm,
        "add_m": add,
        "adds_m": adds,
        "add_pass": bool(add < thr),
        "adds_pass": bool(adds < thr),
    }


def success_rate(results) -> float:
    """Percentage of tracking results without the failure flag."""
    results = list(results)
    if not results:
        raise EmptyInput("no sequences")
    def failed(r):
        if isinstance(r, dict):
            flag = r.get("failure_flag", r.get("failure", False))
            if isinstance(flag, dict):
                flag = flag.get("flag", False)
            return bool(flag)
        return bool(getattr(r, "failure_flag", False))

    ok = sum(1 for r in results if not failed(r))
    return 100.0 * ok / len(results)
