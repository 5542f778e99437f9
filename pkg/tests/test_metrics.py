import numpy as np
import pytest

from hoitrack.errors import EmptyCloud, EmptyInput, LengthMismatch
from hoitrack.geometry import RigidPose, quat_to_mat, so3_exp, mat_to_quat
from hoitrack.metrics import (
    cd_hand_relative,
    chamfer_fscore,
    mpjpe,
    pose_errors,
    success_rate,
)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# MPJPE


def test_mpjpe_zero_identical(rng):
    j = rng.normal(size=(21, 3))
    assert mpjpe(j, j) == 0.0


def test_mpjpe_root_relative(rng):
    j = rng.normal(size=(21, 3))
    assert mpjpe(j + np.array([0.3, -0.1, 0.2]), j) == pytest.approx(0.0, abs=1e-9)


def test_mpjpe_known_value():
    g = np.zeros((21, 3))
    p = np.zeros((21, 3))
    p[1:, 0] = 0.01  # 20 joints off by 1 cm, root-aligned
    assert mpjpe(p, g) == pytest.approx(20 / 21 * 10.0)


def test_mpjpe_shape_check():
    with pytest.raises(LengthMismatch):
        mpjpe(np.zeros((20, 3)), np.zeros((21, 3)))


# ---------------------------------------------------------------------------
# chamfer / F-score


def brute_chamfer(p, g):
    d_pg = np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(-1)).min(axis=1)
    d_gp = np.sqrt(((g[:, None, :] - p[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return float(np.mean(d_pg**2) + np.mean(d_gp**2)) * 1e4, d_pg, d_gp


def test_chamfer_matches_brute_force(rng):
    for _ in range(10):
        p = rng.normal(size=(80, 3)) * 0.1
        g = rng.normal(size=(70, 3)) * 0.1
        cd, fs = chamfer_fscore(p, g)
        cd_ref, d_pg, d_gp = brute_chamfer(p, g)
        assert abs(cd - cd_ref) < 1e-10
        for tau in (0.005, 0.010):
            prec = float(np.mean(d_pg < tau))
            rec = float(np.mean(d_gp < tau))
            f_ref = 0.0 if prec + rec == 0 else 200 * prec * rec / (prec + rec)
            assert abs(fs[tau] - f_ref) < 1e-10


def test_chamfer_identical_clouds(rng):
    p = rng.normal(size=(100, 3))
    cd, fs = chamfer_fscore(p, p)
    assert cd == 0.0
    assert fs[0.005] == 100.0 and fs[0.010] == 100.0


def test_chamfer_known_offset():
    p = np.zeros((1, 3))
    g = np.array([[0.01, 0.0, 0.0]])
    cd, fs = chamfer_fscore(p, g)
    assert cd == pytest.approx(2 * 0.01**2 * 1e4)  # both directions
    assert fs[0.005] == 0.0 and fs[0.010] == 0.0  # strict < threshold


def test_chamfer_empty_raises():
    with pytest.raises(EmptyCloud):
        chamfer_fscore(np.zeros((0, 3)), np.ones((5, 3)))


# ---------------------------------------------------------------------------
# hand-relative chamfer


def test_cd_hand_relative_invariant_to_shared_motion(rng):
    obj = rng.normal(size=(60, 3)) * 0.05
    hand_pose = RigidPose(random_unit_quat(rng), rng.normal(size=3))
    base = cd_hand_relative(obj, obj, hand_pose, hand_pose)
    assert base == pytest.approx(0.0, abs=1e-12)
    # move the prediction rigidly together with its hand frame: unchanged
    q = random_unit_quat(rng)
    t = rng.normal(size=3)
    R = quat_to_mat(q)
    moved_obj = obj @ R.T + t
    moved_hand = RigidPose(mat_to_quat(R @ hand_pose.matrix), R @ hand_pose.translation + t)
    assert cd_hand_relative(moved_obj, obj, moved_hand, hand_pose) == pytest.approx(0.0, abs=1e-9)


def test_cd_hand_relative_detects_relative_slip(rng):
    obj = rng.normal(size=(60, 3)) * 0.05
    hand_pose = RigidPose.identity()
    slipped = obj + np.array([0.02, 0.0, 0.0])
    assert cd_hand_relative(slipped, obj, hand_pose, hand_pose) > 1.0  # cm^2


# ---------------------------------------------------------------------------
# pose errors


def test_pose_errors_identity(rng):
    v = rng.normal(size=(50, 3)) * 0.05
    pose = RigidPose(random_unit_quat(rng), rng.normal(size=3))
    e = pose_errors(pose, pose, v)
    assert e["rot_deg"] == pytest.approx(0.0, abs=1e-6)
    assert e["trans_mm"] == 0.0
    assert e["add_pass"] and e["adds_pass"]


def test_pose_errors_known_rotation():
    v = np.random.default_rng(0).normal(size=(50, 3)) * 0.05
    gt = RigidPose.identity()
    pred = RigidPose(mat_to_quat(so3_exp(np.array([0.0, 0.0, np.radians(15.0)]))), np.zeros(3))
    e = pose_errors(pred, gt, v)
    assert e["rot_deg"] == pytest.approx(15.0, abs=1e-9)


def test_pose_errors_known_translation():
    v = np.random.default_rng(0).normal(size=(50, 3)) * 0.05
    gt = RigidPose.identity()
    pred = RigidPose(np.array([1.0, 0, 0, 0]), np.array([0.003, 0.004, 0.0]))
    e = pose_errors(pred, gt, v)
    assert e["trans_mm"] == pytest.approx(5.0, abs=1e-9)
    assert e["add_m"] == pytest.approx(0.005, abs=1e-12)


def test_adds_forgives_symmetry():
    # cube vertices under a 90-degree rotation: ADD large, ADD-S ~ 0
    from hoitrack.synth import make_cube

    v = make_cube(0.1).vertices
    gt = RigidPose.identity()
    pred = RigidPose(mat_to_quat(so3_exp(np.array([0.0, 0.0, np.pi / 2]))), np.zeros(3))
    e = pose_errors(pred, gt, v)
    assert e["adds_m"] < 1e-9 < e["add_m"]
    assert e["adds_pass"] and not e["add_pass"]


def test_pose_errors_threshold_is_diameter_fraction(rng):
    v = rng.normal(size=(100, 3)) * 0.05
    diameter = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    gt = RigidPose.identity()
    eps = 1e-4
    near = RigidPose(np.array([1.0, 0, 0, 0]), np.array([0.1 * diameter - eps, 0, 0]))
    far = RigidPose(np.array([1.0, 0, 0, 0]), np.array([0.1 * diameter + eps, 0, 0]))
    assert pose_errors(near, gt, v)["add_pass"]
    assert not pose_errors(far, gt, v)["add_pass"]


# ---------------------------------------------------------------------------
# success rate


def test_success_rate_counts_flags():
    results = [
        {"failure": {"flag": False}},
        {"failure": {"flag": True, "reason": "lost"}},
        {"failure_flag": False},
        {"failure_flag": True},
    ]
    assert success_rate(results) == 50.0


def test_success_rate_objects():
    class R:
        def __init__(self, f):
            self.failure_flag = f

    assert success_rate([R(False), R(False), R(True)]) == pytest.approx(200 / 3)


def test_success_rate_empty():
    with pytest.raises(EmptyInput):
        success_rate([])
