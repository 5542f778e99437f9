"""Sequence evaluation against ground truth and report rendering.

The report path emits three artifact kinds next to each other: report.json
(aggregates + conventions), a per-frame CSV with every metric column, and
PNG figures of the per-frame error curves.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import SchemaError  # noqa: E402
from .geometry import AnisoScale, RigidPose, apply_pose  # noqa: E402
from .metrics import (  # noqa: E402
    MESH_SAMPLE_COUNT,
    EvalReport,
    cd_hand_relative,
    chamfer_fscore,
    mpjpe,
    pose_errors,
    success_rate,
)
from .sequence import SequenceHandle  # noqa: E402

EVAL_SAMPLE_SEED = 20_000


def evaluate_tracking(
    seq: SequenceHandle,
    track: dict,
    gt: dict | None = None,
    n_samples: int = MESH_SAMPLE_COUNT,
    seed: int = EVAL_SAMPLE_SEED,
) -> EvalReport:
    """Per-frame and aggregate metrics of a track.json payload against gt."""
    if gt is None:
        gt = seq.gt()
    if gt is None:
        raise SchemaError("no ground truth available for evaluation")
    gt_frames = {int(f["index"]): f for f in gt["frames"]}
    mesh = seq.mesh()
    rng = np.random.default_rng(seed)
    canonical = mesh.sample_surface(n_samples, rng)
    hand_scale = float(gt.get("hand_scale", 1.0))

    per_frame = []
    for rec in track["frames"]:
        idx = int(rec["index"])
        if idx not in gt_frames:
            raise SchemaError(f"track frame {idx} missing from ground truth")
        g = gt_frames[idx]
        pred_pose = RigidPose(np.asarray(rec["obj_q_wxyz"]), np.asarray(rec["obj_T"]))
        gt_pose = RigidPose(np.asarray(g["obj_q_wxyz"]), np.asarray(g["obj_T"]))
        pred_scale = AnisoScale(*rec["scale"])
        gt_scale = AnisoScale(*g.get("scale", (1.0, 1.0, 1.0)))

        pred_cloud = apply_pose(pred_pose, pred_scale, canonical)
        gt_cloud = apply_pose(gt_pose, gt_scale, canonical)
        cd, fs = chamfer_fscore(pred_cloud, gt_cloud)

        frame = seq.frame(idx)
        pred_joints = hand_scale * frame.hand.joints3d + np.asarray(rec["hand_T"])
        gt_joints = np.asarray(g["joints3d"])
        jpe = mpjpe(pred_joints, gt_joints)

        pred_root = RigidPose(frame.hand.rotation, np.asarray(rec["hand_T"]))
        gt_root = RigidPose(frame.hand.rotation, np.asarray(g["hand_T"]))
        cdh = cd_hand_relative(pred_cloud, gt_cloud, pred_root, gt_root)

        pe = pose_errors(pred_pose, gt_pose, apply_pose(RigidPose.identity(), gt_scale, mesh.vertices))
        per_frame.append(
            {
                "index": idx,
                "rot_deg": pe["rot_deg"],
                "trans_mm": pe["trans_mm"],
                "add_pass": pe["add_pass"],
                "adds_pass": pe["adds_pass"],
                "mpjpe_mm": jpe,
                "cd_cm2": cd,
                "f5_pct": fs[0.005],
                "f10_pct": fs[0.010],
                "cdh_cm2": cdh,
            }
        )

    if not per_frame:
        raise SchemaError("track contains no frames")

    def mean(key):
        return float(np.mean([f[key] for f in per_frame]))

    return EvalReport(
        mpjpe_mm=mean("mpjpe_mm"),
        cd_cm2=mean("cd_cm2"),
        f5_pct=mean("f5_pct"),
        f10_pct=mean("f10_pct"),
        cdh_cm2=mean("cdh_cm2"),
        success_rate_pct=success_rate([track]),
        rot_err_deg=mean("rot_deg"),
        trans_err_mm=mean("trans_mm"),
        add_pct=100.0 * float(np.mean([f["add_pass"] for f in per_frame])),
        adds_pct=100.0 * float(np.mean([f["adds_pass"] for f in per_frame])),
        per_frame=per_frame,
    )


_CSV_COLUMNS = (
    "index",
    "rot_deg",
    "trans_mm",
    "add_pass",
    "adds_pass",
    "mpjpe_mm",
    "cd_cm2",
    "f5_pct",
    "f10_pct",
    "cdh_cm2",
)


def write_per_frame_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for row in report.per_frame:
            writer.writerow({k: row[k] for k in _CSV_COLUMNS})


def render_figures(report: EvalReport, prefix) -> list:
    """Per-frame error curves as PNG files; returns the written paths."""
    prefix = Path(prefix)
    idx = [f["index"] for f in report.per_frame]
    written = []

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(idx, [f["rot_deg"] for f in report.per_frame], "o-")
    ax1.set_ylabel("rotation error (deg)")
    ax1.grid(True, alpha=0.3)
    ax2.plot(idx, [f["trans_mm"] for f in report.per_frame], "o-", color="tab:orange")
    ax2.set_ylabel("translation error (mm)")
    ax2.set_xlabel("frame")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("Object pose error per processed frame")
    path = prefix.with_name(prefix.name + "_pose_errors.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(idx, [f["cd_cm2"] for f in report.per_frame], "o-", label="CD (cm$^2$)")
    ax1.plot(idx, [f["cdh_cm2"] for f in report.per_frame], "s--", label="hand-relative CD")
    ax1.set_ylabel("chamfer (cm$^2$)")
    ax1.legend()
    ax1.grid(True, alpha=0.3)
    ax2.plot(idx, [f["mpjpe_mm"] for f in report.per_frame], "o-", color="tab:green")
    ax2.set_ylabel("MPJPE (mm)")
    ax2.set_xlabel("frame")
    ax2.grid(True, alpha=0.3)
    fig.suptitle("Geometry and hand metrics per processed frame")
    path = prefix.with_name(prefix.name + "_geometry.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)
    return written
