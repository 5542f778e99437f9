"""Anchor-and-track orchestration: onset-frame joint optimization followed by
bi-directional two-step per-frame propagation.

The onset frame anchors the trajectory: object translation is constrained to
the visual ray through the unprojected object-mask centroid and optimized
jointly with anisotropic log-scale and the hand translation. Every other
processed frame runs a hand step (joint reprojection only) and an object step
(composite silhouette + feature + interaction objective), initialized from
the neighboring processed frame closer to the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .align import detect_iof, pnp_translation
from .errors import (
    DegenerateConfiguration,
    DegenerateKeypoints,
    EmptyObjectMask,
    NoOnsetPose,
)
from .geometry import (
    AnisoScale,
    BinaryMask,
    CameraIntrinsics,
    RigidPose,
    TriMesh,
    apply_pose,
    inverse_pose_map,
    mat_to_quat,
    quat_to_mat,
    so3_exp,
    to_object_frame,
)
from .losses import (
    CanonicalSamples,
    LossWeights,
    composite_object_loss,
    contact_loss,
    dino_loss,
    interact_loss,
    joint_reproj_loss,
    mask_loss,
    similarity_maps,
)
from .optim import (
    DEFAULT_CONV_TOL,
    DEFAULT_WINDOW,
    FD_STEP_LOG_SCALE,
    FD_STEP_ROTATION,
    FD_STEP_TRANSLATION,
    ParamGroup,
    optimize,
)
from .rasterizer import (
    DEFAULT_DEPTH_EPS,
    DEFAULT_MAX_RENDER_PX,
    VISIBLE,
    classify_points,
    hard_mask,
    render_silhouette,
)
from .sdf import SdfGrid, build_sdf, query, soft_gate
from .sequence import SequenceHandle


@dataclass
class TrackerConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    hand_iters: int = 200
    object_iters: int = 400
    lr_rot: float = 2e-3
    lr_trans: float = 1e-3
    lr_hand_trans: float = 1e-3
    lr_scale: float = 2e-3
    sigma: float = 40.0
    tau: float = 0.025
    n_samples: int = 256
    resample_interval: int = 10
    stride: int = 5
    conv_tol: float = DEFAULT_CONV_TOL
    window: int = DEFAULT_WINDOW
    hand_scale: float = 1.0
    sdf_resolution: int = 64
    max_render_px: int = DEFAULT_MAX_RENDER_PX
    # Sharper than the rasterizer default: tracking needs a tight silhouette
    # basin, and the narrow transition band also keeps renders cheap.
    sharpness: float = 4.0
    depth_eps: float = DEFAULT_DEPTH_EPS
    onset_contact_band: float = 0.05
    failure_iou: float = 0.1
    failure_consecutive: int = 3
    min_visible_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        positive = (
            "hand_iters",
            "object_iters",
            "lr_rot",
            "lr_trans",
            "lr_hand_trans",
            "lr_scale",
            "sigma",
            "tau",
            "n_samples",
            "resample_interval",
            "conv_tol",
            "window",
            "hand_scale",
            "sdf_resolution",
            "max_render_px",
            "sharpness",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @staticmethod
    def from_dict(overrides: dict) -> "TrackerConfig":
        known = {f.name for f in fields(TrackerConfig)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return TrackerConfig(**overrides)


@dataclass
class FrameEstimate:
    index: int
    hand_translation: np.ndarray  # (3,) meters
    object_pose: RigidPose
    object_scale: AnisoScale
    losses: dict
    converged: bool
    iterations: int


@dataclass
class TrackResult:
    frames: dict  # frame index -> FrameEstimate
    iof_index: int
    failure_flag: bool = False
    failure_reason: str = ""

    def frames_sorted(self) -> list:
        return [self.frames[i] for i in sorted(self.frames)]


# ---------------------------------------------------------------------------
# shared helpers


def render_intrinsics(K: CameraIntrinsics, max_render_px: int) -> CameraIntrinsics:
    longest = max(K.width, K.height)
    if longest <= max_render_px:
        return K
    return K.scaled(max_render_px / longest)


def _resample_bits(bits: np.ndarray, height: int, width: int) -> np.ndarray:
    if bits.shape == (height, width):
        return bits
    vs = np.minimum((np.arange(height) * bits.shape[0] / height).astype(int), bits.shape[0] - 1)
    us = np.minimum((np.arange(width) * bits.shape[1] / width).astype(int), bits.shape[1] - 1)
    return bits[np.ix_(vs, us)]


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(((a > 0) | (b > 0)).sum())
    if union == 0:
        return 1.0
    return int(((a > 0) & (b > 0)).sum()) / union


def _interpolated_descriptors(vert_desc, faces, fids, bary):
    d = (
        vert_desc[faces[fids, 0]] * bary[:, :1]
        + vert_desc[faces[fids, 1]] * bary[:, 1:2]
        + vert_desc[faces[fids, 2]] * bary[:, 2:3]
    )
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    return d / np.maximum(norms, 1e-12)


def sample_visible_points(
    mesh: TriMesh,
    vert_desc: np.ndarray,
    pose: RigidPose,
    scale: AnisoScale,
    hand_mask_render: BinaryMask,
    K_render: CameraIntrinsics,
    cfg: TrackerConfig,
    rng,
):
    """Canonical surface points (with descriptors) visible at the given pose.

    Returns (points, descriptors) or None when nothing is visible.
    """
    pts, fids, bary = mesh.sample_surface_with_faces(4 * cfg.n_samples, rng)
    render = render_silhouette(mesh, pose, scale, K_render, cfg.sharpness)
    labels = classify_points(
        apply_pose(pose, scale, pts), render, hand_mask_render, K_render, cfg.depth_eps
    )
    keep = np.nonzero(labels == VISIBLE)[0][: cfg.n_samples]
    if not len(keep):
        return None
    desc = _interpolated_descriptors(vert_desc, mesh.faces, fids[keep], bary[keep])
    return pts[keep], desc


def _interaction_cache(prev_pose, scale, hand_verts_metric, sdf, cfg):
    """Cached object-frame hand coordinates plus frozen gating weights."""
    prev_local = to_object_frame(prev_pose, hand_verts_metric)
    local_canon = inverse_pose_map(prev_pose, scale, hand_verts_metric)
    dist = scale.mean * query(sdf, local_canon)
    w = soft_gate(dist, cfg.sigma)
    w = np.where(dist > cfg.weights.interact_max_dist, 0.0, w)
    return prev_local, w


# ---------------------------------------------------------------------------
# onset frame


def optimize_onset(
    frame,
    mesh: TriMesh,
    sdf: SdfGrid,
    K: CameraIntrinsics,
    init_pose: RigidPose,
    init_scale: AnisoScale,
    cfg: TrackerConfig,
) -> FrameEstimate:
    """Joint onset optimization of ray translation, log-scale and hand T."""
    if init_pose is None:
        raise NoOnsetPose("onset pose required")
    if frame.mask_obj.area() == 0:
        raise EmptyObjectMask(f"frame {frame.index}")
    K_r = render_intrinsics(K, cfg.max_render_px)

    # Visual-ray constraint: the ray through the initial translation estimate
    # (the unprojected mask centroid is a fallback — it is biased toward the
    # visible surface and can miss the object center by several millimeters).
    if np.linalg.norm(init_pose.translation) > 1e-6:
        d_ray = init_pose.translation / np.linalg.norm(init_pose.translation)
    else:
        vs, us = np.nonzero(frame.mask_obj.bits)
        depths = frame.depth.values[vs, us]
        valid = depths > 0
        if valid.any():
            x = depths[valid] * (us[valid] - K.cx) / K.fx
            y = depths[valid] * (vs[valid] - K.cy) / K.fy
            centroid = np.array([x.mean(), y.mean(), depths[valid].mean()])
        else:
            centroid = np.array([(us.mean() - K.cx) / K.fx, (vs.mean() - K.cy) / K.fy, 1.0])
        d_ray = centroid / np.linalg.norm(centroid)

    hand = frame.hand
    try:
        hand_t0 = pnp_translation(
            hand.joints3d, hand.joints2d, K, hand.rotation, scale=cfg.hand_scale
        )
    except DegenerateConfiguration:
        hand_t0 = np.array([0.0, 0.0, max(float(init_pose.translation[2]), 0.1)])

    t0 = max(float(init_pose.translation @ d_ray), 1e-3)
    rot = init_pose.rotation
    hand_verts = cfg.hand_scale * hand.vertices
    hand_joints = cfg.hand_scale * hand.joints3d
    w = cfg.weights

    def split(values):
        t, log_s, hand_t = values
        pose = RigidPose(rot, float(t[0]) * d_ray)
        scale = AnisoScale(*np.exp(log_s))
        return pose, scale, hand_t

    def hand_terms(pose, scale, hand_t):
        local = inverse_pose_map(pose, scale, hand_verts + hand_t)
        l_contact = contact_loss(local, sdf, attract_band=cfg.onset_contact_band)
        l_joint, grad_joint = joint_reproj_loss(hand_joints + hand_t, hand.joints2d, K)
        return l_contact, l_joint, grad_joint

    def loss_fn(values):
        pose, scale, hand_t = split(values)
        render = render_silhouette(mesh, pose, scale, K_r, cfg.sharpness)
        l_mask = mask_loss(render, frame.mask_obj, ignore=frame.mask_hand)
        l_contact, l_joint, _ = hand_terms(pose, scale, hand_t)
        return w.w_mask * l_mask + w.w_contact * l_contact + l_joint

    def hand_grad(values):
        # Joint term analytically; contact term by cheap central differences
        # (no render involved); the mask term is hand-independent.
        pose, scale, hand_t = split(values)
        _, _, grad = hand_terms(pose, scale, hand_t)
        step = FD_STEP_TRANSLATION
        for i in range(3):
            hp, hm = hand_t.copy(), hand_t.copy()
            hp[i] += step
            hm[i] -= step
            cp = contact_loss(
                inverse_pose_map(pose, scale, hand_verts + hp), sdf, attract_band=cfg.onset_contact_band
            )
            cm = contact_loss(
                inverse_pose_map(pose, scale, hand_verts + hm), sdf, attract_band=cfg.onset_contact_band
            )
            grad[i] += w.w_contact * (cp - cm) / (2 * step)
        return grad

    groups = [
        ParamGroup("ray_t", np.array([t0]), cfg.lr_trans, FD_STEP_TRANSLATION),
        ParamGroup("log_scale", np.log(init_scale.vec), cfg.lr_scale, FD_STEP_LOG_SCALE),
        ParamGroup("hand_T", hand_t0, cfg.lr_hand_trans, grad_fn=hand_grad),
    ]
    res = optimize(loss_fn, groups, cfg.object_iters, cfg.conv_tol, cfg.window)
    pose, scale, hand_t = split(res.values)
    render = render_silhouette(mesh, pose, scale, K_r, cfg.sharpness)
    l_mask = mask_loss(render, frame.mask_obj, ignore=frame.mask_hand)
    l_contact, l_joint, _ = hand_terms(pose, scale, hand_t)
    return FrameEstimate(
        index=frame.index,
        hand_translation=hand_t,
        object_pose=pose,
        object_scale=scale,
        losses={
            "mask": l_mask,
            "contact": l_contact,
            "joint": l_joint,
            "total": res.final_loss,
        },
        converged=res.converged,
        iterations=res.iterations,
    )


# ---------------------------------------------------------------------------
# per-frame steps


def step_hand(frame, K: CameraIntrinsics, cfg: TrackerConfig):
    """Hand translation from PnP init refined under the joint reprojection
    loss alone; returns (translation, iterations, converged, loss)."""
    hand = frame.hand
    valid = np.isfinite(hand.joints3d).all(axis=1) & np.isfinite(hand.joints2d).all(axis=1)
    if valid.sum() < 3:
        raise DegenerateKeypoints(f"frame {frame.index}: {int(valid.sum())} valid keypoints")
    try:
        t0 = pnp_translation(hand.joints3d, hand.joints2d, K, hand.rotation, scale=cfg.hand_scale)
    except DegenerateConfiguration as exc:
        raise DegenerateKeypoints(f"frame {frame.index}: {exc}") from exc
    joints = cfg.hand_scale * hand.joints3d

    def loss_fn(values):
        return joint_reproj_loss(joints + values[0], hand.joints2d, K)[0]

    def grad_fn(values):
        return joint_reproj_loss(joints + values[0], hand.joints2d, K)[1]

    group = ParamGroup("hand_T", t0, cfg.lr_hand_trans, grad_fn=grad_fn)
    res = optimize(loss_fn, [group], cfg.hand_iters, cfg.conv_tol, cfg.window)
    return res.values[0], res.iterations, res.converged, res.final_loss


def step_object(
    frame,
    prev_pose: RigidPose,
    scale: AnisoScale,
    hand_translation: np.ndarray,
    mesh: TriMesh,
    samples: CanonicalSamples | None,
    prev_local: np.ndarray,
    gate_weights: np.ndarray,
    K: CameraIntrinsics,
    cfg: TrackerConfig,
):
    """Object pose update minimizing the composite objective from the
    preceding processed frame's pose; returns (pose, losses, iters, converged,
    visible_fraction)."""
    K_r = render_intrinsics(K, cfg.max_render_px)
    hand_mask_r = BinaryMask(_resample_bits(frame.mask_hand.bits, K_r.height, K_r.width))
    hand_verts_t = cfg.hand_scale * frame.hand.vertices + hand_translation
    base_rot = prev_pose.rotation
    w = cfg.weights
    feat = frame.features
    feat_dims = (feat.hf, feat.wf) if feat is not None else None

    def make_pose(delta, T):
        return RigidPose(mat_to_quat(quat_to_mat(base_rot) @ so3_exp(delta)), T)

    def components(values):
        delta, T = values
        pose = make_pose(delta, T)
        render = render_silhouette(mesh, pose, scale, K_r, cfg.sharpness)
        l_mask = mask_loss(render, frame.mask_obj, ignore=frame.mask_hand)
        l_dino = 0.0
        vis_frac = 0.0
        if samples is not None and feat is not None:
            labels = classify_points(
                apply_pose(pose, scale, samples.points), render, hand_mask_r, K_r, cfg.depth_eps
            )
            vis_frac = float(np.mean(labels == VISIBLE))
            l_dino = dino_loss(
                samples, pose, scale, K, labels, feat_dims, (K.width, K.height)
            )
        l_interact = interact_loss(hand_verts_t, pose, prev_local, gate_weights)
        return l_mask, l_dino, l_interact, vis_frac

    def loss_fn(values):
        l_mask, l_dino, l_interact, _ = components(values)
        return composite_object_loss(l_mask, l_dino, l_interact, w)

    groups = [
        ParamGroup("rot_delta", np.zeros(3), cfg.lr_rot, FD_STEP_ROTATION),
        ParamGroup("obj_T", prev_pose.translation.copy(), cfg.lr_trans, FD_STEP_TRANSLATION),
    ]
    res = optimize(loss_fn, groups, cfg.object_iters, cfg.conv_tol, cfg.window)
    l_mask, l_dino, l_interact, vis_frac = components(res.values)
    pose = make_pose(*res.values)
    losses = {
        "mask": l_mask,
        "dino": l_dino,
        "interact": l_interact,
        "total": res.final_loss,
    }
    return pose, losses, res.iterations, res.converged, vis_frac


# ---------------------------------------------------------------------------
# full sequence


def _onset_from_inputs(seq: SequenceHandle, onset: dict | None, cfg: TrackerConfig):
    """Resolve (iof_index, init_pose, init_scale) from the onset file, the
    ground-truth file, or mask-based detection."""
    if onset is None:
        onset = seq.onset_pose()
    if onset is not None and "frame_index" in onset:
        idx = int(onset["frame_index"])
    else:
        obj_masks = [seq.frame(i).mask_obj for i in range(seq.frame_count)]
        hand_masks = [seq.frame(i).mask_hand for i in range(seq.frame_count)]
        idx = detect_iof(obj_masks, hand_masks, tau=cfg.tau).frame_index if seq.frame_count > 1 else 0
    if onset is not None and "q_wxyz" in onset:
        pose = RigidPose(np.asarray(onset["q_wxyz"]), np.asarray(onset["T"]))
        scale = AnisoScale(*onset.get("scale", (1.0, 1.0, 1.0)))
        return idx, pose, scale
    gt = seq.gt()
    if gt is not None:
        rec = next((f for f in gt["frames"] if f["index"] == idx), None)
        if rec is not None:
            pose = RigidPose(np.asarray(rec["obj_q_wxyz"]), np.asarray(rec["obj_T"]))
            scale = AnisoScale(*rec.get("scale", (1.0, 1.0, 1.0)))
            return idx, pose, scale
    raise NoOnsetPose("no onset_pose.json and no ground truth to substitute")


def track_bidirectional(
    seq: SequenceHandle,
    cfg: TrackerConfig,
    onset: dict | None = None,
) -> TrackResult:
    """Anchor at the interaction onset frame, then propagate forward to the
    sequence end and backward to its start with the configured stride."""
    mesh = seq.mesh()
    vert_desc = seq.vertex_features()
    sdf = build_sdf(mesh, cfg.sdf_resolution)
    K = seq.intrinsics
    K_r = render_intrinsics(K, cfg.max_render_px)

    iof, init_pose, init_scale = _onset_from_inputs(seq, onset, cfg)
    onset_frame = seq.frame(iof)
    onset_est = optimize_onset(onset_frame, mesh, sdf, K, init_pose, init_scale, cfg)
    scale = onset_est.object_scale  # frozen: shared by every estimate

    result = TrackResult(frames={iof: onset_est}, iof_index=iof)
    bad_runs = []
    for direction in (1, -1):
        indices = range(iof + direction * cfg.stride, seq.frame_count if direction > 0 else -1, direction * cfg.stride)
        prev_est = onset_est
        prev_frame = onset_frame
        sample_pts = None
        sample_desc = None
        last_vis_frac = 1.0
        consecutive_bad = 0
        max_bad = 0
        for k, fi in enumerate(indices, start=1):
            frame = seq.frame(fi)
            hand_t, hand_iters, hand_conv, l_joint = step_hand(frame, K, cfg)

            prev_hand_metric = (
                cfg.hand_scale * prev_frame.hand.vertices + prev_est.hand_translation
            )
            prev_local, gate_w = _interaction_cache(
                prev_est.object_pose, scale, prev_hand_metric, sdf, cfg
            )

            need_resample = (
                vert_desc is not None
                and frame.features is not None
                and (
                    sample_pts is None
                    or (k - 1) % cfg.resample_interval == 0
                    or last_vis_frac < cfg.min_visible_fraction
                )
            )
            if need_resample:
                rng = np.random.default_rng([cfg.seed, 0 if direction > 0 else 1, fi])
                hand_mask_r = BinaryMask(
                    _resample_bits(frame.mask_hand.bits, K_r.height, K_r.width)
                )
                sampled = sample_visible_points(
                    mesh, vert_desc, prev_est.object_pose, scale, hand_mask_r, K_r, cfg, rng
                )
                if sampled is not None:
                    sample_pts, sample_desc = sampled
            samples = None
            if sample_pts is not None and frame.features is not None:
                samples = CanonicalSamples(
                    sample_pts, sample_desc, similarity_maps(sample_desc, frame.features)
                )

            pose, losses, obj_iters, obj_conv, last_vis_frac = step_object(
                frame,
                prev_est.object_pose,
                scale,
                hand_t,
                mesh,
                samples,
                prev_local,
                gate_w,
                K,
                cfg,
            )
            losses["joint"] = l_joint

            render = render_silhouette(mesh, pose, scale, K_r, cfg.sharpness)
            gt_bits = _resample_bits(frame.mask_obj.bits, K_r.height, K_r.width)
            iou = _mask_iou(hard_mask(render), gt_bits)
            consecutive_bad = consecutive_bad + 1 if iou < cfg.failure_iou else 0
            max_bad = max(max_bad, consecutive_bad)

            est = FrameEstimate(
                index=fi,
                hand_translation=hand_t,
                object_pose=pose,
                object_scale=scale,
                losses=losses,
                converged=hand_conv and obj_conv,
                iterations=hand_iters + obj_iters,
            )
            result.frames[fi] = est
            prev_est = est
            prev_frame = frame
        bad_runs.append(max_bad)

    if max(bad_runs) >= cfg.failure_consecutive:
        result.failure_flag = True
        result.failure_reason = (
            f"silhouette IoU below {cfg.failure_iou} for "
            f"{max(bad_runs)} consecutive processed frames"
        )
    return result
