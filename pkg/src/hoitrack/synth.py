"""Synthetic hand-object sequence generator with exact ground truth.

Stands in for real footage plus the external segmentation / depth / keypoint
/ feature models: every output obeys the sequence layout, and the feature
oracle is constructed so cosine similarity peaks at the true projection of
each visible surface point. The hand is a rigid sphere-cluster claw attached
to the object frame during the grasp.

The rasterization here is intentionally a separate, plain z-buffer
implementation so it can serve as an independent check of the soft renderer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import detect_iof
from .errors import InvalidConfig
from .geometry import (
    BinaryMask,
    CameraIntrinsics,
    RigidPose,
    TriMesh,
    mat_to_quat,
    quat_to_mat,
    so3_exp,
)
from .losses import FeatureGrid
from .sequence import FRAME_DIR_DIGITS, write_obj
from .tensorfile import write_tensor

DEFAULT_CHANNELS = 16


@dataclass
class SynthConfig:
    object_kind: str = "cube"  # cube | cylinder | path to an OBJ file
    object_size: float = 0.08  # meters (longest extent)
    object_scale: float = 1.0  # ground-truth anisotropic scale (isotropic here)
    frames: int = 60
    rot_amp_deg: float = 2.0  # max rotation per frame
    trans_amp_mm: float = 2.0  # max translation per frame
    width: int = 160
    height: int = 120
    fx: float = 170.0
    fy: float = 170.0
    cx: float = 80.0
    cy: float = 60.0
    center_depth: float = 0.45
    static_prefix: int = 0  # motionless frames before interaction onset
    hand_enabled: bool = True
    finger_radius: float = 0.008
    noise_keypoint_px: float = 0.0
    noise_depth_mm: float = 0.0
    mask_flip_rate: float = 0.0
    onset_rot_noise_deg: float = 0.0
    onset_trans_noise_mm: float = 0.0
    feat_downsample: int = 4
    feat_channels: int = DEFAULT_CHANNELS
    stride: int = 5
    seed: int = 0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def validate(self):
        if self.frames < 1 or self.rot_amp_deg < 0 or self.trans_amp_mm < 0:
            raise InvalidConfig("frames >= 1 and non-negative amplitudes required")
        if self.width % self.feat_downsample or self.height % self.feat_downsample:
            raise InvalidConfig("image size must be divisible by feat_downsample")


# ---------------------------------------------------------------------------
# primitive meshes


def make_cube(size: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    h = size / 2.0
    c = np.asarray(center, dtype=np.float64)
    corners = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]
    ) + c
    # 12 triangles with outward winding
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append([a, b, cc])
        faces.append([a, cc, d])
    return TriMesh(corners, np.asarray(faces))


def make_cylinder(radius: float, height: float, segments: int = 24) -> TriMesh:
    ang = 2 * np.pi * np.arange(segments) / segments
    top = np.stack([radius * np.cos(ang), np.full(segments, height / 2), radius * np.sin(ang)], axis=1)
    bot = np.stack([radius * np.cos(ang), np.full(segments, -height / 2), radius * np.sin(ang)], axis=1)
    verts = [top, bot, np.array([[0, height / 2, 0]]), np.array([[0, -height / 2, 0]])]
    verts = np.concatenate(verts, axis=0)
    ct, cb = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        # side
        faces.append([i, segments + i, j])
        faces.append([j, segments + i, segments + j])
        # caps
        faces.append([ct, i, j])
        faces.append([cb, segments + j, segments + i])
    return TriMesh(verts, np.asarray(faces))


def make_uv_sphere(radius: float, center, rings: int = 6, segments: int = 8, pole_dir=(0, 0, 1)) -> TriMesh:
    """Sphere with an exact vertex at the -pole_dir and +pole_dir directions."""
    d = np.asarray(pole_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    # orthonormal frame with z = pole direction
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    verts = [d * radius]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            th = 2 * np.pi * s / segments
            v = (
                np.cos(phi) * d + np.sin(phi) * (np.cos(th) * e1 + np.sin(th) * e2)
            ) * radius
            verts.append(v)
    verts.append(-d * radius)
    verts = np.asarray(verts) + np.asarray(center, dtype=np.float64)
    faces = []
    for s in range(segments):
        faces.append([0, 1 + s, 1 + (s + 1) % segments])
    for r in range(rings - 2):
        base0 = 1 + r * segments
        base1 = 1 + (r + 1) * segments
        for s in range(segments):
            s1 = (s + 1) % segments
            faces.append([base0 + s, base1 + s, base0 + s1])
            faces.append([base0 + s1, base1 + s, base1 + s1])
    last = len(verts) - 1
    base = 1 + (rings - 2) * segments
    for s in range(segments):
        faces.append([last, base + (s + 1) % segments, base + s])
    return TriMesh(verts, np.asarray(faces))


def build_object(cfg: SynthConfig) -> TriMesh:
    if cfg.object_kind == "cube":
        return make_cube(cfg.object_size)
    if cfg.object_kind == "cylinder":
        return make_cylinder(radius=cfg.object_size * 0.3, height=cfg.object_size)
    from .sequence import read_obj

    return read_obj(cfg.object_kind)


# ---------------------------------------------------------------------------
# ray casting (contact point placement)


def ray_mesh_first_hit(origin, direction, mesh: TriMesh):
    """Nearest positive-t intersection; returns (t, point, normal) or None."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    v = mesh.vertices
    a = v[mesh.faces[:, 0]]
    e1 = v[mesh.faces[:, 1]] - a
    e2 = v[mesh.faces[:, 2]] - a
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    t_all = np.full(len(a), np.inf)
    s = o - a
    det_safe = np.where(ok, det, 1.0)
    u = np.einsum("ij,ij->i", s, p) / det_safe
    q = np.cross(s, e1)
    w = np.einsum("j,ij->i", d, q) / det_safe
    t = np.einsum("ij,ij->i", e2, q) / det_safe
    hit = ok & (u >= -1e-12) & (w >= -1e-12) & (u + w <= 1 + 1e-12) & (t > 1e-9)
    t_all[hit] = t[hit]
    i = int(np.argmin(t_all))
    if not np.isfinite(t_all[i]):
        return None
    n = np.cross(e1[i], e2[i])
    n /= np.linalg.norm(n)
    if np.dot(n, d) > 0:
        n = -n
    return t_all[i], o + t_all[i] * d, n


# ---------------------------------------------------------------------------
# hand proxy


@dataclass
class HandProxy:
    """Rigid sphere-cluster claw expressed in the object's canonical frame."""

    mesh_local: TriMesh
    joints_local: np.ndarray  # (21, 3)
    contact_vertex_ids: np.ndarray


def build_hand_proxy(obj_mesh: TriMesh, finger_radius: float, rng) -> HandProxy:
    """Five fingertip spheres touching the surface plus a palm sphere.

    Each fingertip sphere has a pole vertex exactly on the object surface, so
    the grasp satisfies a >= 5 vertices-in-contact guarantee by construction.
    """
    centroid = obj_mesh.vertices.mean(axis=0)
    # grasp directions: a spread pinch around +y with a thumb from -y
    dirs = np.array(
        [
            [0.2, 1.0, 0.0],
            [0.0, 1.0, 0.35],
            [-0.2, 1.0, 0.0],
            [0.0, 1.0, -0.35],
            [0.0, -1.0, 0.1],
        ]
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sub_meshes = []
    contacts = []
    tips = []
    for d in dirs:
        hit = ray_mesh_first_hit(centroid, d, obj_mesh)
        if hit is None:
            raise InvalidConfig("grasp ray missed the object")
        _, p, _ = hit
        center = p + d * finger_radius
        sphere = make_uv_sphere(finger_radius, center, pole_dir=-d)
        # pole vertex 0 of this sphere sits exactly at the contact point p
        contacts.append(p)
        tips.append(center)
        sub_meshes.append(sphere)
    palm_dir = np.array([0.0, 1.0, 0.0])
    palm_center = centroid + palm_dir * (
        np.linalg.norm(np.asarray(tips).mean(axis=0) - centroid) + 4 * finger_radius
    )
    sub_meshes.append(make_uv_sphere(2.2 * finger_radius, palm_center, pole_dir=palm_dir))

    verts = []
    faces = []
    contact_ids = []
    off = 0
    for i, m in enumerate(sub_meshes):
        verts.append(m.vertices)
        faces.append(m.faces + off)
        if i < len(contacts):
            contact_ids.append(off)  # the on-surface pole vertex
        off += len(m.vertices)
    mesh = TriMesh(np.concatenate(verts), np.concatenate(faces))

    # 21 joints: wrist + 4 per finger (knuckle, two mids, tip)
    joints = [palm_center + palm_dir * 2.2 * finger_radius]  # wrist/root
    for tip in tips:
        for t in (0.25, 0.5, 0.75, 1.0):
            joints.append(palm_center + t * (np.asarray(tip) - palm_center))
    return HandProxy(
        mesh_local=mesh,
        joints_local=np.asarray(joints),
        contact_vertex_ids=np.asarray(contact_ids),
    )


# ---------------------------------------------------------------------------
# hard z-buffer rasterization (independent of the soft renderer)


def zbuffer_raster(verts_cam: np.ndarray, faces: np.ndarray, K: CameraIntrinsics):
    """Returns (depth, face_id, bary): z-buffer at pixel centers.

    depth is +inf on background; face_id is -1 there.
    """
    h, w = K.height, K.width
    depth = np.full((h, w), np.inf)
    fid = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    z = verts_cam[:, 2]
    valid = z > 1e-6
    uv = np.full((len(verts_cam), 2), np.nan)
    uv[valid, 0] = K.fx * verts_cam[valid, 0] / z[valid] + K.cx
    uv[valid, 1] = K.fy * verts_cam[valid, 1] / z[valid] + K.cy
    inv_z = np.where(valid, 1.0 / np.where(valid, z, 1.0), 0.0)
    for i, f in enumerate(faces):
        if not valid[f].all():
            continue
        tri = uv[f]
        u0 = max(int(np.ceil(tri[:, 0].min())), 0)
        u1 = min(int(np.floor(tri[:, 0].max())), w - 1)
        v0 = max(int(np.ceil(tri[:, 1].min())), 0)
        v1 = min(int(np.floor(tri[:, 1].max())), h - 1)
        if u0 > u1 or v0 > v1:
            continue
        d = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (
            tri[1, 1] - tri[0, 1]
        ) * (tri[2, 0] - tri[0, 0])
        if abs(d) < 1e-12:
            continue
        gu, gv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1), indexing="xy")
        l1 = ((gu - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (gv - tri[0, 1]) * (tri[2, 0] - tri[0, 0])) / d
        l2 = ((gv - tri[0, 1]) * (tri[1, 0] - tri[0, 0]) - (gu - tri[0, 0]) * (tri[1, 1] - tri[0, 1])) / d
        l0 = 1.0 - l1 - l2
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not hit.any():
            continue
        # perspective-correct interpolation via 1/z
        izz = l0 * inv_z[f[0]] + l1 * inv_z[f[1]] + l2 * inv_z[f[2]]
        zz = np.where(izz > 0, 1.0 / np.maximum(izz, 1e-12), np.inf)
        sl = (slice(v0, v1 + 1), slice(u0, u1 + 1))
        closer = hit & (zz < depth[sl])
        depth[sl] = np.where(closer, zz, depth[sl])
        fid[sl] = np.where(closer, i, fid[sl])
        sub = bary[sl]
        for k, lk in enumerate((l0, l1, l2)):
            # perspective-correct barycentric w.r.t. the 3-D surface
            sub[..., k] = np.where(
                closer, lk * inv_z[f[k]] / np.maximum(izz, 1e-12), sub[..., k]
            )
    return depth, fid, bary


# ---------------------------------------------------------------------------
# feature oracle


def vertex_descriptors(n_verts: int, channels: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_verts, channels))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def feature_oracle(
    mesh: TriMesh,
    gt_pose: RigidPose,
    K: CameraIntrinsics,
    grid_dims: tuple,
    channels: int = DEFAULT_CHANNELS,
    seed: int = 0,
    scale_vec=None,
    vert_desc: np.ndarray | None = None,
    occluder_depth: np.ndarray | None = None,
):
    """Dense feature map whose similarity against any surface descriptor
    peaks at that point's true projection. Returns (FeatureGrid, vert_desc).
    """
    hf, wf = grid_dims
    if vert_desc is None:
        vert_desc = vertex_descriptors(len(mesh.vertices), channels, seed)
    s = np.ones(3) if scale_vec is None else np.asarray(scale_vec, dtype=np.float64)
    Kf = CameraIntrinsics(
        fx=K.fx * wf / K.width,
        fy=K.fy * hf / K.height,
        cx=K.cx * wf / K.width,
        cy=K.cy * hf / K.height,
        width=wf,
        height=hf,
    )
    verts_cam = (mesh.vertices * s) @ gt_pose.matrix.T + gt_pose.translation
    depth, fid, bary = zbuffer_raster(verts_cam, mesh.faces, Kf)
    grid = np.zeros((hf, wf, channels))
    hit = fid >= 0
    if occluder_depth is not None:
        hit &= ~(occluder_depth < depth)
    vs, us = np.nonzero(hit)
    f = mesh.faces[fid[vs, us]]
    d = (
        vert_desc[f[:, 0]] * bary[vs, us, 0, None]
        + vert_desc[f[:, 1]] * bary[vs, us, 1, None]
        + vert_desc[f[:, 2]] * bary[vs, us, 2, None]
    )
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    grid[vs, us] = d / np.maximum(norms, 1e-12)
    return FeatureGrid(grid), vert_desc


# ---------------------------------------------------------------------------
# motion model


def make_trajectory(cfg: SynthConfig, rng):
    """Ground-truth object poses: slerped keypose rotations plus sinusoidal
    translation, per-frame deltas capped by the configured amplitudes."""
    n = cfg.frames
    moving = max(1, n - cfg.static_prefix)
    rot_rate = np.radians(cfg.rot_amp_deg)
    # incremental rotation: piecewise-constant random axis, smooth rate
    seg_len = 15
    axes = rng.normal(size=(moving // seg_len + 2, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    T0 = np.array([0.0, 0.0, cfg.center_depth])
    amp_m = cfg.trans_amp_mm * 1e-3
    freq = rng.uniform(1.0, 2.0, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    amp_axis = amp_m * moving / (2 * np.pi * freq) * rng.uniform(0.5, 1.0, size=3)

    poses = []
    base_q = rng.normal(size=4)
    base_q /= np.linalg.norm(base_q)
    if base_q[0] < 0:
        base_q = -base_q
    R = quat_to_mat(base_q)
    for t in range(n):
        k = 0.0 if t < cfg.static_prefix else t - cfg.static_prefix
        tt = k / moving
        trans = T0 + amp_axis * np.sin(2 * np.pi * freq * tt + phase) - amp_axis * np.sin(phase)
        if t > cfg.static_prefix:
            seg = int((t - cfg.static_prefix) // seg_len)
            rate = rot_rate * (0.6 + 0.4 * np.sin(np.pi * tt))
            R = R @ so3_exp(axes[seg] * rate)
        poses.append(RigidPose(mat_to_quat(R), trans))
    return poses


# ---------------------------------------------------------------------------
# sequence generation


def generate_sequence(cfg: SynthConfig, out_dir) -> Path:
    """Write a fully labeled synthetic sequence; returns the directory path."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "object").mkdir(exist_ok=True)

    K = cfg.intrinsics()
    mesh = build_object(cfg)
    write_obj(out / "object" / "canonical.obj", mesh)
    vert_desc = vertex_descriptors(len(mesh.vertices), cfg.feat_channels, cfg.seed + 101)
    write_tensor(out / "object" / "vert_feat.tf", vert_desc.astype(np.float32))

    scale = np.full(3, cfg.object_scale)
    hand = build_hand_proxy(mesh, cfg.finger_radius, rng) if cfg.hand_enabled else None
    if hand is not None:
        # The hand model's topology is prior knowledge (the per-frame files
        # carry only posed vertices), so the faces are published once.
        (out / "hand").mkdir(exist_ok=True)
        write_tensor(out / "hand" / "faces.tf", hand.mesh_local.faces.astype(np.int32))
    poses = make_trajectory(cfg, rng)
    hf = cfg.height // cfg.feat_downsample
    wf = cfg.width // cfg.feat_downsample
    Kf = CameraIntrinsics(
        K.fx * wf / K.width, K.fy * hf / K.height, K.cx * wf / K.width, K.cy * hf / K.height, wf, hf
    )

    gt_frames = []
    obj_masks = []
    hand_masks = []
    noise_rng = np.random.default_rng(cfg.seed + 7)
    for t, pose in enumerate(poses):
        d = out / "frames" / f"{t:0{FRAME_DIR_DIGITS}d}"
        d.mkdir(exist_ok=True)
        verts_obj = (mesh.vertices * scale) @ pose.matrix.T + pose.translation
        depth_o, fid_o, _ = zbuffer_raster(verts_obj, mesh.faces, K)
        if hand is not None:
            verts_hand = (hand.mesh_local.vertices * scale) @ pose.matrix.T + pose.translation
            joints_cam = (hand.joints_local * scale) @ pose.matrix.T + pose.translation
            depth_h, fid_h, _ = zbuffer_raster(verts_hand, hand.mesh_local.faces, K)
        else:
            verts_hand = np.zeros((0, 3))
            joints_cam = np.tile(pose.translation, (21, 1)) + np.array([0, 0, 0.1])
            depth_h = np.full((cfg.height, cfg.width), np.inf)
            fid_h = np.full((cfg.height, cfg.width), -1)

        mask_obj = (fid_o >= 0) & ~(depth_h < depth_o)
        mask_hand = (fid_h >= 0) & ~(depth_o < depth_h)
        scene_depth = np.minimum(depth_o, depth_h)
        depth_img = np.where(np.isfinite(scene_depth), scene_depth, 0.0)
        if cfg.noise_depth_mm > 0:
            noise = noise_rng.normal(0, cfg.noise_depth_mm * 1e-3, depth_img.shape)
            depth_img = np.where(depth_img > 0, np.maximum(depth_img + noise, 1e-4), 0.0)
        if cfg.mask_flip_rate > 0:
            for m in (mask_obj, mask_hand):
                flips = noise_rng.random(m.shape) < cfg.mask_flip_rate
                m ^= flips

        # hand observation: pre-translation convention anchored at the wrist
        wrist = joints_cam[0]
        joints2d = np.stack(
            [
                K.fx * joints_cam[:, 0] / joints_cam[:, 2] + K.cx,
                K.fy * joints_cam[:, 1] / joints_cam[:, 2] + K.cy,
            ],
            axis=1,
        )
        if cfg.noise_keypoint_px > 0:
            joints2d = joints2d + noise_rng.normal(0, cfg.noise_keypoint_px, joints2d.shape)

        feat, _ = feature_oracle(
            mesh,
            pose,
            K,
            (hf, wf),
            channels=cfg.feat_channels,
            scale_vec=scale,
            vert_desc=vert_desc,
            occluder_depth=zbuffer_raster(verts_hand, hand.mesh_local.faces, Kf)[0]
            if hand is not None
            else None,
        )

        write_tensor(d / "depth.tf", depth_img.astype(np.float32))
        write_tensor(d / "mask_obj.tf", mask_obj.astype(np.uint8))
        write_tensor(d / "mask_hand.tf", mask_hand.astype(np.uint8))
        write_tensor(d / "feat.tf", feat.values.astype(np.float32))
        write_tensor(d / "hand_verts.tf", (verts_hand - wrist).astype(np.float32))
        (d / "hand.json").write_text(
            json.dumps(
                {
                    "joints3d": (joints_cam - wrist).tolist(),
                    "joints2d": joints2d.tolist(),
                    "rotation_wxyz": [1.0, 0.0, 0.0, 0.0],
                },
                sort_keys=True,
            )
        )
        gt_frames.append(
            {
                "index": t,
                "obj_q_wxyz": [float(v) for v in pose.rotation],
                "obj_T": [float(v) for v in pose.translation],
                "hand_T": [float(v) for v in wrist],
                "joints3d": joints_cam.tolist(),
                "scale": [float(v) for v in scale],
            }
        )
        obj_masks.append(BinaryMask(mask_obj))
        hand_masks.append(BinaryMask(mask_hand))

    meta = {
        "width": cfg.width,
        "height": cfg.height,
        "fx": cfg.fx,
        "fy": cfg.fy,
        "cx": cfg.cx,
        "cy": cfg.cy,
        "frame_count": cfg.frames,
        "stride": cfg.stride,
        "feat_downsample": cfg.feat_downsample,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "gt.json").write_text(
        json.dumps(
            {"hand_scale": 1.0, "object_scale": [float(v) for v in scale], "frames": gt_frames},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )

    if cfg.frames >= 2:
        onset = detect_iof(obj_masks, hand_masks)
        idx = onset.frame_index
    else:
        idx = 0
    pose = poses[idx]
    q = pose.rotation
    T = pose.translation.copy()
    if cfg.onset_rot_noise_deg > 0:
        axis = noise_rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = mat_to_quat(quat_to_mat(q) @ so3_exp(axis * np.radians(cfg.onset_rot_noise_deg)))
        q = dq
    if cfg.onset_trans_noise_mm > 0:
        T = T + noise_rng.normal(0, cfg.onset_trans_noise_mm * 1e-3, 3)
    (out / "onset_pose.json").write_text(
        json.dumps(
            {
                "frame_index": int(idx),
                "q_wxyz": [float(v) for v in q],
                "T": [float(v) for v in T],
                "scale": [float(v) for v in scale],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return out
