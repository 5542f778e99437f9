import numpy as np
import pytest

from hoitrack.align import (
    IOF_EPS,
    aggregate_object_scale,
    detect_iof,
    iof_motion_ratios,
    pnp_translation,
    trimmed_icp_scale,
    ScaleAlignResult,
)
from hoitrack.errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateSource,
    DimensionMismatch,
    TooFewPoints,
)
from hoitrack.geometry import BinaryMask, CameraIntrinsics, project, quat_to_mat

K = CameraIntrinsics(fx=170.0, fy=170.0, cx=80.0, cy=60.0, width=160, height=120)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# trimmed ICP scale


def surface_cloud(rng, n=500):
    from hoitrack.synth import make_cube

    return make_cube(0.1).sample_surface(n, rng)


def test_icp_scale_exact_noiseless(rng):
    for _ in range(10):
        src = surface_cloud(rng, 400)
        q = random_unit_quat(rng)
        s_true = float(rng.uniform(0.85, 1.2))
        t_true = rng.normal(size=3) * 0.05
        tgt = s_true * (src @ quat_to_mat(q).T) + t_true
        res = trimmed_icp_scale(src, tgt, q, trim_fraction=1.0)
        assert abs(res.scale - s_true) < 1e-6
        assert np.max(np.abs(res.translation - t_true)) < 1e-6
        assert res.rms < 1e-6


def test_icp_scale_outlier_robust():
    rng = np.random.default_rng(5)
    for trial in range(5):
        src = surface_cloud(rng, 500)
        q = random_unit_quat(rng)
        s_true = float(rng.uniform(0.85, 1.2))
        t_true = rng.normal(size=3) * 0.05
        tgt = s_true * (src @ quat_to_mat(q).T) + t_true
        n_out = 50  # 10% gross outliers
        tgt[:n_out] += rng.normal(size=(n_out, 3)) * 0.5 + 1.0
        res = trimmed_icp_scale(src, tgt, q, trim_fraction=0.8)
        assert abs(res.scale - s_true) / s_true < 0.01
        assert res.inlier_fraction == pytest.approx(0.8, abs=1e-3)


def test_icp_scale_translation_invariance(rng):
    # shifting both clouds by the same offset leaves the scale unchanged
    src = surface_cloud(rng, 400)
    q = random_unit_quat(rng)
    tgt = 1.1 * (src @ quat_to_mat(q).T) + np.array([0.02, -0.01, 0.03])
    base = trimmed_icp_scale(src, tgt, q).scale
    off = np.array([3.0, -2.0, 5.0])
    shifted = trimmed_icp_scale(src + off, tgt + off, q).scale
    assert abs(base - shifted) < 1e-9


def test_icp_scale_too_few_points():
    with pytest.raises(TooFewPoints):
        trimmed_icp_scale(np.zeros((5, 3)), np.zeros((50, 3)), np.array([1.0, 0, 0, 0]))


def test_icp_scale_degenerate_source():
    tgt = np.random.default_rng(0).normal(size=(50, 3))
    with pytest.raises(DegenerateSource):
        trimmed_icp_scale(np.zeros((50, 3)), tgt, np.array([1.0, 0, 0, 0]))


def test_icp_scale_trim_fraction_validation(rng):
    src = rng.normal(size=(50, 3))
    with pytest.raises(ValueError):
        trimmed_icp_scale(src, src, np.array([1.0, 0, 0, 0]), trim_fraction=0.0)


# ---------------------------------------------------------------------------
# translation-only PnP


def test_pnp_exact_noiseless(rng):
    for _ in range(10):
        joints = rng.normal(size=(21, 3)) * 0.05
        q = random_unit_quat(rng)
        s = float(rng.uniform(0.8, 1.2))
        T_true = np.array([0.01, -0.02, 0.5]) + rng.normal(size=3) * 0.02
        cam = s * (joints @ quat_to_mat(q).T) + T_true
        uv = project(K, cam)
        T = pnp_translation(joints, uv, K, q, scale=s)
        assert np.max(np.abs(T - T_true)) < 1e-6


def test_pnp_noise_stays_close(rng):
    joints = rng.normal(size=(21, 3)) * 0.05
    q = np.array([1.0, 0, 0, 0])
    T_true = np.array([0.0, 0.0, 0.5])
    uv = project(K, joints + T_true) + rng.normal(size=(21, 2)) * 0.5
    T = pnp_translation(joints, uv, K, q)
    assert np.linalg.norm(T - T_true) < 0.01


def test_pnp_rejects_too_few():
    with pytest.raises(DegenerateConfiguration):
        pnp_translation(np.zeros((2, 3)), np.zeros((2, 2)), K, np.array([1.0, 0, 0, 0]))


def test_pnp_rejects_collinear():
    joints = np.stack([np.linspace(0, 1, 5), np.zeros(5), np.zeros(5)], axis=1)
    uv = np.tile([80.0, 60.0], (5, 1))
    with pytest.raises(DegenerateConfiguration):
        pnp_translation(joints, uv, K, np.array([1.0, 0, 0, 0]))


def test_pnp_ignores_nonfinite_joints(rng):
    joints = rng.normal(size=(21, 3)) * 0.05
    T_true = np.array([0.0, 0.0, 0.4])
    uv = project(K, joints + T_true)
    joints2 = joints.copy()
    joints2[3] = np.nan  # dropped, solution unchanged
    T = pnp_translation(joints2, uv, K, np.array([1.0, 0, 0, 0]))
    assert np.max(np.abs(T - T_true)) < 1e-6


def test_pnp_behind_camera():
    rng = np.random.default_rng(2)
    joints = rng.normal(size=(10, 3)) * 0.05
    uv = project(K, joints + np.array([0.0, 0.0, 0.5]))
    # mismatched correspondences that admit no positive-depth fit still
    # return; only structurally impossible setups raise
    with pytest.raises((BehindCamera, DegenerateConfiguration)):
        pnp_translation(np.full((10, 3), np.nan), uv, K, np.array([1.0, 0, 0, 0]))


# ---------------------------------------------------------------------------
# interaction onset detection


def mask(arr):
    return BinaryMask(np.asarray(arr, dtype=np.uint8))


def blank(h=20, w=20):
    return np.zeros((h, w), dtype=np.uint8)


def square(r0, c0, size=6, h=20, w=20):
    m = blank(h, w)
    m[r0 : r0 + size, c0 : c0 + size] = 1
    return m


def test_iof_ratios_match_integer_oracle(rng):
    obj, hand = [], []
    for _ in range(12):
        obj.append(mask(rng.integers(0, 2, (16, 16))))
        hand.append(mask(rng.integers(0, 2, (16, 16))))
    r = iof_motion_ratios(obj, hand)
    for i in range(11):
        o0 = obj[i].bits.astype(int)
        o1 = obj[i + 1].bits.astype(int)
        h0 = hand[i].bits.astype(int)
        h1 = hand[i + 1].bits.astype(int)
        num = int(sum(abs(int(a) - int(b)) * (1 - int(c)) * (1 - int(d))
                      for a, b, c, d in zip(o1.ravel(), o0.ravel(), h1.ravel(), h0.ravel())))
        expected = num / (int(o0.sum()) + IOF_EPS)
        assert r[i] == expected  # bit-equal


def test_iof_hand_pixels_excluded():
    o0 = square(7, 7)
    o1 = square(7, 8)  # shifted by one column
    h = blank()
    h[:, :] = 1  # hand covers everything in both frames
    r = iof_motion_ratios([mask(o0), mask(o1)], [mask(h), mask(h)])
    assert r[0] == 0.0


def test_detect_iof_static_then_motion():
    obj = [mask(square(7, 7))] * 4 + [mask(square(7, 9)), mask(square(7, 11))]
    hand = [mask(blank())] * 6
    res = detect_iof(obj, hand, tau=0.025)
    assert res.frame_index == 3  # first transition exceeding tau starts here
    assert np.all(res.motion_ratios[:3] == 0.0)
    assert res.motion_ratios[3] > 0.025


def test_detect_iof_threshold_boundary():
    # ratio exactly tau must NOT trigger (strict >)
    o0 = blank()
    o0[5:15, 5:15] = 1  # area 100
    o1 = o0.copy()
    o1[5, 5] = 0
    o1[5, 6] = 0  # 2 changed pixels: ratio ~ 0.02
    res = detect_iof([mask(o0), mask(o1)], [mask(blank())] * 2, tau=0.02)
    assert res.frame_index == 0  # fallback: 0.02/(100+eps) < 0.02 strictly


def test_detect_iof_border_exclusion():
    moving_at_border = [mask(square(0, 0)), mask(square(0, 3))]
    hand = [mask(blank())] * 2
    res = detect_iof(moving_at_border, hand, border_margin=2)
    assert res.frame_index == 0  # border-touching candidate skipped, fallback
    res2 = detect_iof(moving_at_border, hand, border_margin=0)
    assert res2.frame_index == 0 and res2.motion_ratios[0] > 0.025


def test_detect_iof_all_static_fallback():
    seq = [mask(square(7, 7))] * 5
    res = detect_iof(seq, [mask(blank())] * 5)
    assert res.frame_index == 0


def test_iof_dimension_checks():
    with pytest.raises(DimensionMismatch):
        iof_motion_ratios([mask(blank())], [mask(blank())])
    with pytest.raises(DimensionMismatch):
        iof_motion_ratios([mask(blank()), mask(blank(10, 10))], [mask(blank())] * 2)


# ---------------------------------------------------------------------------
# scale aggregation


def res_with(scale):
    return ScaleAlignResult(scale=scale, translation=np.zeros(3), rms=0.0, inlier_fraction=1.0)


def test_aggregate_scale_median():
    big = blank(60, 60)
    big[5:55, 5:55] = 1  # 2500 px, above the area floor
    results = [res_with(s) for s in (1.0, 1.1, 0.9, 5.0, 1.05)]
    masks = [mask(big)] * 5
    hands = [mask(blank(60, 60))] * 5
    assert aggregate_object_scale(results, masks, hands) == pytest.approx(1.05)


def test_aggregate_scale_skips_occluded_and_small():
    big = blank(60, 60)
    big[5:55, 5:55] = 1
    small = blank(60, 60)
    small[0:5, 0:5] = 1
    covered = big.copy()  # hand fully overlaps the object here
    results = [res_with(1.0), res_with(99.0), res_with(99.0), None]
    masks = [mask(big), mask(small), mask(big), mask(big)]
    hands = [mask(blank(60, 60)), mask(blank(60, 60)), mask(covered), mask(blank(60, 60))]
    assert aggregate_object_scale(results, masks, hands) == 1.0


def test_aggregate_scale_no_frames():
    with pytest.raises(TooFewPoints):
        aggregate_object_scale([None], [mask(blank())], [mask(blank())])
