"""Dataset layout on disk, result serialization and debug image output.

A sequence directory holds:
  meta.json                       intrinsics, image size, frame count, stride
  object/canonical.obj            canonical mesh (meters)
  object/vert_feat.tf             optional per-vertex unit descriptors
  hand/faces.tf                   optional i32 (F, 3) hand model topology
  frames/NNNNNN/depth.tf          f32 (H, W) meters, 0 = invalid
  frames/NNNNNN/mask_hand.tf      u8 (H, W)
  frames/NNNNNN/mask_obj.tf       u8 (H, W)
  frames/NNNNNN/feat.tf           optional f32 (hf, wf, C)
  frames/NNNNNN/hand.json         joints3d / joints2d / rotation quaternion
  frames/NNNNNN/hand_verts.tf     f32 (N, 3) pre-scale, pre-translation
  gt.json                         optional ground truth
  onset_pose.json                 optional externally estimated onset pose
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IoError,
    MissingFile,
    NonFiniteValue,
    SchemaError,
)
from .geometry import (
    BinaryMask,
    CameraIntrinsics,
    DepthMap,
    HandFrameObservation,
    RigidPose,
    TriMesh,
)
from .losses import FeatureGrid
from .tensorfile import read_tensor, write_tensor

FRAME_DIR_DIGITS = 6


# ---------------------------------------------------------------------------
# mesh OBJ


def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise SchemaError(f"{path}: no geometry")
    return TriMesh(np.asarray(verts), np.asarray(faces))


# ---------------------------------------------------------------------------
# sequence handle


@dataclass
class FrameData:
    index: int
    depth: DepthMap
    mask_hand: BinaryMask
    mask_obj: BinaryMask
    hand: HandFrameObservation
    features: FeatureGrid | None


class SequenceHandle:
    """Validated lazy view over a sequence directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.is_file():
            raise MissingFile(str(meta_path))
        try:
            self.meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{meta_path}: {exc}") from exc
        for key in ("width", "height", "fx", "fy", "cx", "cy", "frame_count"):
            if key not in self.meta:
                raise SchemaError(f"{meta_path}: missing field {key!r}")
        self.intrinsics = CameraIntrinsics(
            fx=self.meta["fx"],
            fy=self.meta["fy"],
            cx=self.meta["cx"],
            cy=self.meta["cy"],
            width=int(self.meta["width"]),
            height=int(self.meta["height"]),
        )
        self.frame_count = int(self.meta["frame_count"])
        self.stride = int(self.meta.get("stride", 5))
        self._validate_layout()
        self._cache: dict[int, FrameData] = {}

    def _frame_dir(self, i: int) -> Path:
        return self.root / "frames" / f"{i:0{FRAME_DIR_DIGITS}d}"

    def _validate_layout(self):
        mesh_path = self.root / "object" / "canonical.obj"
        if not mesh_path.is_file():
            raise MissingFile(str(mesh_path))
        for i in range(self.frame_count):
            d = self._frame_dir(i)
            if not d.is_dir():
                raise MissingFile(str(d))
            for name in ("depth.tf", "mask_hand.tf", "mask_obj.tf", "hand.json", "hand_verts.tf"):
                if not (d / name).is_file():
                    raise MissingFile(str(d / name))

    def mesh(self) -> TriMesh:
        return read_obj(self.root / "object" / "canonical.obj")

    def hand_faces(self) -> np.ndarray | None:
        """Hand model topology (shared by every frame's hand_verts), if published."""
        p = self.root / "hand" / "faces.tf"
        if not p.is_file():
            return None
        return np.asarray(read_tensor(p), dtype=np.int64)

    def vertex_features(self) -> np.ndarray | None:
        p = self.root / "object" / "vert_feat.tf"
        if not p.is_file():
            return None
        return np.asarray(read_tensor(p), dtype=np.float64)

    def gt(self) -> dict | None:
        p = self.root / "gt.json"
        return json.loads(p.read_text()) if p.is_file() else None

    def onset_pose(self) -> dict | None:
        p = self.root / "onset_pose.json"
        return json.loads(p.read_text()) if p.is_file() else None

    def frame(self, i: int) -> FrameData:
        if i in self._cache:
            return self._cache[i]
        if not (0 <= i < self.frame_count):
            raise IndexError(i)
        d = self._frame_dir(i)
        depth = read_tensor(d / "depth.tf")
        mh = read_tensor(d / "mask_hand.tf")
        mo = read_tensor(d / "mask_obj.tf")
        hw = (self.intrinsics.height, self.intrinsics.width)
        for name, arr in (("depth.tf", depth), ("mask_hand.tf", mh), ("mask_obj.tf", mo)):
            if tuple(arr.shape) != hw:
                raise SchemaError(f"{d / name}: shape {arr.shape} vs meta {hw}")
        hand_raw = json.loads((d / "hand.json").read_text())
        try:
            hand = HandFrameObservation(
                vertices=read_tensor(d / "hand_verts.tf"),
                joints3d=np.asarray(hand_raw["joints3d"], dtype=np.float64),
                joints2d=np.asarray(hand_raw["joints2d"], dtype=np.float64),
                rotation=np.asarray(hand_raw["rotation_wxyz"], dtype=np.float64),
            )
        except KeyError as exc:
            raise SchemaError(f"{d / 'hand.json'}: missing field {exc}") from exc
        feat = None
        fp = d / "feat.tf"
        if fp.is_file():
            feat = FeatureGrid(read_tensor(fp).astype(np.float64))
        fd = FrameData(
            index=i,
            depth=DepthMap(depth.astype(np.float64)),
            mask_hand=BinaryMask(mh),
            mask_obj=BinaryMask(mo),
            hand=hand,
            features=feat,
        )
        self._cache[i] = fd
        return fd


def read_sequence(directory) -> SequenceHandle:
    return SequenceHandle(Path(directory))


# ---------------------------------------------------------------------------
# result files


def _require_finite(obj, path="$"):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _require_finite(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _require_finite(v, f"{path}[{i}]")
    elif isinstance(obj, float) and not np.isfinite(obj):
        raise NonFiniteValue(path)


def _dump(payload: dict, path) -> None:
    _require_finite(payload)
    try:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def pose_to_json(pose: RigidPose) -> dict:
    return {
        "q_wxyz": [float(v) for v in pose.rotation],
        "T": [float(v) for v in pose.translation],
    }


def pose_from_json(obj: dict) -> RigidPose:
    return RigidPose(np.asarray(obj["q_wxyz"]), np.asarray(obj["T"]))


def write_track_result(result, path) -> None:
    frames = []
    for fe in result.frames_sorted():
        frames.append(
            {
                "index": fe.index,
                "hand_T": [float(v) for v in fe.hand_translation],
                "obj_q_wxyz": [float(v) for v in fe.object_pose.rotation],
                "obj_T": [float(v) for v in fe.object_pose.translation],
                "scale": [fe.object_scale.sx, fe.object_scale.sy, fe.object_scale.sz],
                "losses": {k: float(v) for k, v in fe.losses.items()},
                "converged": bool(fe.converged),
                "iterations": int(fe.iterations),
            }
        )
    _dump(
        {
            "iof_index": int(result.iof_index),
            "frames": frames,
            "failure": {"flag": bool(result.failure_flag), "reason": result.failure_reason},
        },
        path,
    )


def read_track_result(path) -> dict:
    return json.loads(Path(path).read_text())


def write_eval_report(report, path) -> None:
    _dump(
        {
            "mpjpe_mm": report.mpjpe_mm,
            "cd_cm2": report.cd_cm2,
            "f5_pct": report.f5_pct,
            "f10_pct": report.f10_pct,
            "cdh_cm2": report.cdh_cm2,
            "success_rate_pct": report.success_rate_pct,
            "rot_err_deg": report.rot_err_deg,
            "trans_err_mm": report.trans_err_mm,
            "add_pct": report.add_pct,
            "adds_pct": report.adds_pct,
            "per_frame": report.per_frame,
            "conventions": _conventions(),
        },
        path,
    )


def _conventions() -> dict:
    from .metrics import CONVENTIONS

    return dict(CONVENTIONS)


def write_init_result(hand_scale, object_scale, iof_index, per_frame_hand_translation, path):
    _dump(
        {
            "hand_scale": float(hand_scale),
            "object_scale": float(object_scale),
            "iof_index": int(iof_index),
            "per_frame_hand_translation": [
                [float(v) for v in t] if t is not None else None
                for t in per_frame_hand_translation
            ],
        },
        path,
    )


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM of a [0, 1] float or uint8 image."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
