"""Command-line surface: synth / init / track / eval / render-debug.

Exit codes: 0 success, 1 usage error, 2 data error, 3 tracking failure
flagged. Data errors are reported to standard error with file/field context.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import align, synth, tracker
from .errors import HoitrackError
from .geometry import AnisoScale, RigidPose, TriMesh, quat_to_mat
from .losses import LossWeights
from .report import evaluate_tracking, render_figures, write_per_frame_csv
from .rasterizer import hard_mask, render_silhouette
from .sequence import (
    read_sequence,
    read_track_result,
    write_eval_report,
    write_init_result,
    write_pgm,
    write_track_result,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRACKING_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    """Usage error carrying the parser message (mapped to exit code 1)."""


def _build_parser() -> _Parser:
    parser = _Parser(prog="hoitrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic sequence")
    p.add_argument("--out", required=True)
    for f in fields(synth.SynthConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, type=lambda s: s.lower() not in ("0", "false", "no"), default=f.default)
        elif isinstance(f.default, int):
            p.add_argument(flag, type=int, default=f.default)
        elif isinstance(f.default, float):
            p.add_argument(flag, type=float, default=f.default)
        else:
            p.add_argument(flag, type=str, default=f.default)

    p = sub.add_parser("init", help="metric initialization (scales, IOF, hand PnP)")
    p.add_argument("--seq", required=True)
    p.add_argument("--out", default=None, help="default: <seq>/init.json")
    p.add_argument("--trim-fraction", type=float, default=align.DEFAULT_TRIM_FRACTION)

    p = sub.add_parser("track", help="anchor-and-track a sequence")
    p.add_argument("--seq", required=True)
    p.add_argument("--init", default=None, help="init.json from the init subcommand")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON overriding TrackerConfig fields")
    p.add_argument("--weights-preset", choices=("ho3d", "dexycb"), default=None)

    p = sub.add_parser("eval", help="evaluate a track against ground truth")
    p.add_argument("--seq", required=True)
    p.add_argument("--pred", required=True, help="track.json")
    p.add_argument("--gt", default=None, help="default: <seq>/gt.json")
    p.add_argument("--out", required=True, help="report.json; CSV and figures land beside it")

    p = sub.add_parser("render-debug", help="write silhouette/mask overlays as PGM")
    p.add_argument("--seq", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--track", default=None, help="track.json supplying the pose (default: gt)")
    p.add_argument("--out-prefix", required=True)
    return parser


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    kwargs = {f.name: getattr(args, f.name) for f in fields(synth.SynthConfig)}
    cfg = synth.SynthConfig(**kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synth.generate_sequence(cfg, out)
    print(out)
    return EXIT_OK


def _cmd_init(args) -> int:
    seq = read_sequence(args.seq)
    K = seq.intrinsics
    n = seq.frame_count
    obj_masks = [seq.frame(i).mask_obj for i in range(n)]
    hand_masks = [seq.frame(i).mask_hand for i in range(n)]
    onset = align.detect_iof(obj_masks, hand_masks) if n > 1 else align.OnsetResult(0, np.zeros(0))

    # Rotation for the constrained per-frame ICP: ground truth when present,
    # else the onset pose rotation for every frame (slow-motion approximation).
    gt = seq.gt()
    onset_pose = seq.onset_pose()
    mesh = seq.mesh()

    def frame_rotation(i):
        if gt is not None:
            rec = next((f for f in gt["frames"] if f["index"] == i), None)
            if rec is not None:
                return np.asarray(rec["obj_q_wxyz"])
        if onset_pose is not None and "q_wxyz" in onset_pose:
            return np.asarray(onset_pose["q_wxyz"])
        return np.array([1.0, 0.0, 0.0, 0.0])

    from .geometry import unproject_masked

    def conj(q):
        return np.array([q[0], -q[1], -q[2], -q[3]])

    def object_scale_from_cloud(cloud, rotation):
        # Align the partial visible cloud onto the canonical surface — every
        # source point has a true correspondence that way, so the scale does
        # not collapse toward the visible half. The model-frame scale is the
        # reciprocal of the recovered one.
        res = align.trimmed_icp_scale(
            cloud, mesh, conj(rotation), trim_fraction=args.trim_fraction
        )
        if res.scale <= 1e-9:
            return None
        return align.ScaleAlignResult(
            scale=1.0 / res.scale,
            translation=res.translation,
            rms=res.rms,
            inlier_fraction=res.inlier_fraction,
        )

    # With the hand topology published, the scan is aligned onto the posed
    # hand surface with exact point-to-mesh correspondences (same trick as the
    # object, avoiding the shrink bias of point-to-point matching against a
    # pixel-sampled scan). Without it, the vertex-cloud fallback is occlusion
    # limited: keep only the best quarter and seed from the keypoint PnP.
    hand_faces = seq.hand_faces()
    hand_trim = min(args.trim_fraction, 0.25)

    def hand_scale_from_cloud(cloud, frame, t):
        if hand_faces is not None:
            R = quat_to_mat(frame.hand.rotation)
            res = align.trimmed_icp_scale(
                cloud,
                TriMesh(vertices=frame.hand.vertices, faces=hand_faces),
                conj(frame.hand.rotation),
                trim_fraction=args.trim_fraction,
                init_translation=None if t is None else -(R.T @ t),
            )
            if res.scale <= 1e-9:
                return None
            return align.ScaleAlignResult(
                scale=1.0 / res.scale,
                translation=res.translation,
                rms=res.rms,
                inlier_fraction=res.inlier_fraction,
            )
        return align.trimmed_icp_scale(
            frame.hand.vertices,
            cloud,
            frame.hand.rotation,
            trim_fraction=hand_trim,
            init_translation=t,
        )

    hand_results = []
    obj_results = []
    hand_translations = []
    for i in range(n):
        frame = seq.frame(i)
        try:
            cloud = unproject_masked(frame.depth, frame.mask_obj, K)
            obj_results.append(object_scale_from_cloud(cloud.points, frame_rotation(i)))
        except HoitrackError:
            obj_results.append(None)
        try:
            t = align.pnp_translation(
                frame.hand.joints3d, frame.hand.joints2d, K, frame.hand.rotation
            )
            hand_translations.append([float(v) for v in t])
        except HoitrackError:
            t = None
            hand_translations.append(None)
        try:
            cloud = unproject_masked(frame.depth, frame.mask_hand, K)
            hand_results.append(hand_scale_from_cloud(cloud.points, frame, t))
        except HoitrackError:
            hand_results.append(None)

    object_scale = align.aggregate_object_scale(obj_results, obj_masks, hand_masks)
    hand_scales = [r.scale for r in hand_results if r is not None]
    hand_scale = float(np.median(hand_scales)) if hand_scales else 1.0
    out = Path(args.out) if args.out else Path(args.seq) / "init.json"
    write_init_result(hand_scale, object_scale, onset.frame_index, hand_translations, out)
    print(out)
    return EXIT_OK


def _load_tracker_config(args) -> tracker.TrackerConfig:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    if args.weights_preset:
        overrides["weights"] = LossWeights.preset(args.weights_preset)
    if args.init:
        init = json.loads(Path(args.init).read_text())
        overrides.setdefault("hand_scale", float(init.get("hand_scale", 1.0)))
    return tracker.TrackerConfig.from_dict(overrides)


def _cmd_track(args) -> int:
    seq = read_sequence(args.seq)
    cfg = _load_tracker_config(args)
    result = tracker.track_bidirectional(seq, cfg)
    write_track_result(result, args.out)
    print(args.out)
    if result.failure_flag:
        print(f"tracking failure: {result.failure_reason}", file=sys.stderr)
        return EXIT_TRACKING_FAILED
    return EXIT_OK


def _cmd_eval(args) -> int:
    seq = read_sequence(args.seq)
    track = read_track_result(args.pred)
    gt = json.loads(Path(args.gt).read_text()) if args.gt else None
    report = evaluate_tracking(seq, track, gt=gt)
    out = Path(args.out)
    write_eval_report(report, out)
    write_per_frame_csv(report, out.with_suffix(".csv"))
    figures = render_figures(report, out.with_suffix(""))
    print(out)
    for f in figures:
        print(f)
    return EXIT_OK


def _cmd_render_debug(args) -> int:
    seq = read_sequence(args.seq)
    frame = seq.frame(args.frame)
    mesh = seq.mesh()
    if args.track:
        track = read_track_result(args.track)
        rec = next((f for f in track["frames"] if int(f["index"]) == args.frame), None)
        if rec is None:
            raise HoitrackError(f"frame {args.frame} not in {args.track}")
        pose = RigidPose(np.asarray(rec["obj_q_wxyz"]), np.asarray(rec["obj_T"]))
        scale = AnisoScale(*rec["scale"])
    else:
        gt = seq.gt()
        if gt is None:
            raise HoitrackError("no gt.json and no --track supplied")
        rec = next((f for f in gt["frames"] if int(f["index"]) == args.frame), None)
        if rec is None:
            raise HoitrackError(f"frame {args.frame} not in gt.json")
        pose = RigidPose(np.asarray(rec["obj_q_wxyz"]), np.asarray(rec["obj_T"]))
        scale = AnisoScale(*rec.get("scale", (1.0, 1.0, 1.0)))
    render = render_silhouette(mesh, pose, scale, seq.intrinsics)
    prefix = Path(args.out_prefix)
    paths = {
        "alpha": render.alpha,
        "mask": frame.mask_obj.bits.astype(np.float64),
        "diff": np.abs(render.alpha - frame.mask_obj.bits),
        "overlap": 0.5 * hard_mask(render) + 0.5 * frame.mask_obj.bits,
    }
    for name, img in paths.items():
        out = prefix.with_name(prefix.name + f"_{name}.pgm")
        write_pgm(out, img)
        print(out)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "init": _cmd_init,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "render-debug": _cmd_render_debug,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except HoitrackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
