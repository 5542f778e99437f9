import numpy as np
import pytest

from hoitrack.errors import DegenerateKeypoints, NoOnsetPose
from hoitrack.geometry import AnisoScale, CameraIntrinsics, RigidPose, rotation_geodesic_deg
from hoitrack.losses import LossWeights
from hoitrack.sdf import build_sdf
from hoitrack.tracker import (
    TrackerConfig,
    optimize_onset,
    render_intrinsics,
    step_hand,
    track_bidirectional,
)


def fast_cfg(**kw):
    base = dict(
        stride=2,
        hand_iters=80,
        object_iters=120,
        n_samples=128,
        sdf_resolution=48,
        max_render_px=120,
        seed=1,
    )
    base.update(kw)
    return TrackerConfig(**base)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_match_published_settings():
    cfg = TrackerConfig()
    assert cfg.lr_rot == 2e-3
    assert cfg.lr_trans == 1e-3
    assert cfg.lr_hand_trans == 1e-3
    assert cfg.hand_iters == 200
    assert cfg.object_iters == 400
    assert cfg.conv_tol == 1e-4
    assert cfg.window == 10
    assert cfg.sigma == 40.0
    assert cfg.tau == 0.025
    assert cfg.stride == 5
    assert cfg.n_samples == 256
    assert cfg.resample_interval == 10
    assert cfg.min_visible_fraction == 0.5
    w = cfg.weights
    assert (w.w_mask, w.w_dino, w.w_contact, w.w_interact) == (5.0, 10.0, 5.0, 400.0)
    assert w.interact_max_dist == 0.05


def test_config_coerces_weight_dict():
    cfg = TrackerConfig(weights={"w_interact": 200.0})
    assert isinstance(cfg.weights, LossWeights)
    assert cfg.weights.w_interact == 200.0


def test_config_rejects_unknown_field():
    with pytest.raises(ValueError):
        TrackerConfig.from_dict({"learning_rate": 0.1})


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(object_iters=0)
    with pytest.raises(ValueError):
        TrackerConfig(stride=0)


def test_render_intrinsics_downscale():
    K = CameraIntrinsics(fx=170.0, fy=170.0, cx=80.0, cy=60.0, width=320, height=240)
    K_r = render_intrinsics(K, 160)
    assert K_r.width == 160 and K_r.height == 120
    assert K_r.fx == pytest.approx(85.0)
    assert K_r.cx == pytest.approx(40.0)
    # already small enough: unchanged
    K2 = CameraIntrinsics(fx=10.0, fy=10.0, cx=5.0, cy=5.0, width=10, height=10)
    assert render_intrinsics(K2, 160) is K2


# ---------------------------------------------------------------------------
# hand step


def test_step_hand_recovers_truth(synth_sequence):
    gt = synth_sequence.gt()
    cfg = fast_cfg(hand_iters=200)
    for i in (0, 3, 7):
        frame = synth_sequence.frame(i)
        T, iters, converged, loss = step_hand(frame, synth_sequence.intrinsics, cfg)
        T_true = np.array(gt["frames"][i]["hand_T"])
        assert np.linalg.norm(T - T_true) < 1e-3
        assert loss < 1e-2  # squared pixels


def test_step_hand_degenerate(synth_sequence):
    frame = synth_sequence.frame(0)
    frame.hand.joints3d[:] = np.nan
    try:
        with pytest.raises(DegenerateKeypoints):
            step_hand(frame, synth_sequence.intrinsics, fast_cfg())
    finally:
        synth_sequence._cache.pop(0, None)  # undo the in-place corruption


# ---------------------------------------------------------------------------
# onset anchoring


def test_optimize_onset_recovers_pose_and_scale(synth_sequence):
    gt = synth_sequence.gt()
    onset = synth_sequence.onset_pose()
    idx = onset["frame_index"]
    rec = gt["frames"][idx]
    pose_true = RigidPose(np.array(rec["obj_q_wxyz"]), np.array(rec["obj_T"]))
    mesh = synth_sequence.mesh()
    cfg = fast_cfg(object_iters=300)
    sdf = build_sdf(mesh, cfg.sdf_resolution)
    # start from the true rotation but a biased depth and 0.9x scale
    init_pose = RigidPose(pose_true.rotation, pose_true.translation * 1.02)
    est = optimize_onset(
        synth_sequence.frame(idx),
        mesh,
        sdf,
        synth_sequence.intrinsics,
        init_pose,
        AnisoScale.uniform(0.9 * gt["object_scale"][0]),
        cfg,
    )
    assert np.linalg.norm(est.object_pose.translation - pose_true.translation) < 2e-3
    assert np.max(np.abs(est.object_scale.vec - np.array(gt["object_scale"]))) < 0.02
    assert np.linalg.norm(est.hand_translation - np.array(rec["hand_T"])) < 2e-3


def test_optimize_onset_requires_pose(synth_sequence):
    mesh = synth_sequence.mesh()
    sdf = build_sdf(mesh, 48)
    with pytest.raises(NoOnsetPose):
        optimize_onset(
            synth_sequence.frame(2), mesh, sdf, synth_sequence.intrinsics,
            None, AnisoScale.uniform(1.0), fast_cfg(),
        )


# ---------------------------------------------------------------------------
# bi-directional tracking


@pytest.fixture(scope="module")
def short_track(synth_sequence):
    return track_bidirectional(synth_sequence, fast_cfg()), synth_sequence.gt()


def test_track_covers_stride_grid(short_track):
    result, _ = short_track
    assert result.iof_index == 2
    assert sorted(result.frames) == [0, 2, 4, 6]
    assert not result.failure_flag


def test_track_accuracy(short_track):
    result, gt = short_track
    for est in result.frames_sorted():
        rec = gt["frames"][est.index]
        rot = rotation_geodesic_deg(
            est.object_pose.matrix, RigidPose(np.array(rec["obj_q_wxyz"]), np.zeros(3)).matrix
        )
        trans_mm = np.linalg.norm(est.object_pose.translation - np.array(rec["obj_T"])) * 1000
        assert rot < 5.0, est.index
        assert trans_mm < 5.0, est.index


def test_track_scale_shared_across_frames(short_track):
    result, _ = short_track
    scales = [est.object_scale for est in result.frames_sorted()]
    assert all(s is scales[0] for s in scales)  # frozen after the onset solve


def test_track_losses_recorded(short_track):
    result, _ = short_track
    for est in result.frames_sorted():
        if est.index == result.iof_index:
            continue
        assert {"mask", "dino", "interact", "total"} <= set(est.losses)
        assert all(np.isfinite(v) for v in est.losses.values())


def test_track_failure_flag_on_bad_anchor(synth_sequence):
    gt = synth_sequence.gt()
    rec = gt["frames"][2]
    bad = {
        "frame_index": 2,
        "q_wxyz": rec["obj_q_wxyz"],
        "T": list(np.array(rec["obj_T"]) + np.array([0.15, 0.1, 0.2])),
        "scale": gt["object_scale"],
    }
    cfg = fast_cfg(hand_iters=5, object_iters=5, failure_consecutive=2)
    result = track_bidirectional(synth_sequence, cfg, onset=bad)
    assert result.failure_flag
    assert result.failure_reason
