import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonarloc.degeneracy import (
    Classification,
    Composite,
    DegeneracyThresholds,
    PureX,
    PureY,
    PureYaw,
    classify_frame,
    count_sufficient,
    min_feature_count,
    min_singular_value,
    motion_pose,
    singular_spectrum,
    triangulate_landmark,
    triangulation_jacobian,
)
from sonarloc.errors import ConfigError
from sonarloc.estimation import LinearSystem, predict
from sonarloc.geometry import MODE_2D, MODE_3D, PolarLandmark, Pose


def make_system(a):
    a = np.asarray(a, dtype=float)
    return LinearSystem(a=a, b=np.zeros(a.shape[0]), columns={}, sonar_rows=a.shape[0])


def test_min_feature_count_values():
    assert min_feature_count(MODE_3D) == 6
    assert min_feature_count(MODE_2D) == 2


def test_count_sufficient_verdicts():
    assert not count_sufficient(5, MODE_3D)
    assert count_sufficient(6, MODE_3D)
    assert count_sufficient(2, MODE_2D)


def test_spectrum_identity():
    report = min_singular_value(make_system(np.eye(2)))
    np.testing.assert_allclose(report.spectrum, [1.0, 1.0])
    assert report.sigma_min == 1.0


def test_spectrum_duplicated_rows_rank_one():
    report = min_singular_value(make_system([[1.0, 0.0], [1.0, 0.0]]))
    assert report.sigma_min == pytest.approx(0.0, abs=1e-15)


def test_spectrum_matches_eigensolver_oracle():
    rng = np.random.default_rng(42)
    a = rng.normal(size=(20, 9))
    report = min_singular_value(make_system(a))
    eigs = np.linalg.eigvalsh(a.T @ a)
    assert report.sigma_min == pytest.approx(math.sqrt(max(eigs[0], 0.0)), abs=1e-9)
    assert np.all(np.diff(report.spectrum) <= 1e-12)


def test_spectrum_pads_underdetermined():
    s = singular_spectrum(np.ones((2, 4)))
    assert s.shape == (4,)
    assert s[-1] == 0.0


def test_classify_single_feature_is_under_constrained():
    th = DegeneracyThresholds()
    assert classify_frame(1, 5.0, th) is Classification.UNDER_CONSTRAINED


def test_classify_low_sigma_is_under_constrained():
    th = DegeneracyThresholds(sigma_low=0.13, sigma_high=0.8)
    assert classify_frame(4, 0.05, th) is Classification.UNDER_CONSTRAINED


def test_classify_keyframe_above_high():
    th = DegeneracyThresholds(sigma_low=0.13, sigma_high=0.8)
    assert classify_frame(6, 0.9, th) is Classification.KEYFRAME
    assert classify_frame(6, 0.5, th) is Classification.NORMAL


@given(st.integers(0, 10), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
@settings(max_examples=200, deadline=None)
def test_classify_monotone_in_sigma(n_f, s1, s2):
    th = DegeneracyThresholds()
    lo, hi = sorted((s1, s2))
    order = [Classification.UNDER_CONSTRAINED, Classification.NORMAL, Classification.KEYFRAME]
    assert order.index(classify_frame(n_f, hi, th)) >= order.index(classify_frame(n_f, lo, th))


def test_thresholds_validation():
    with pytest.raises(ConfigError):
        DegeneracyThresholds(sigma_low=1.0, sigma_high=0.5)
    with pytest.raises(ConfigError):
        DegeneracyThresholds(min_features=-1)
    # zero disables a rule and is allowed for baseline runs
    DegeneracyThresholds(sigma_low=0.0, sigma_high=0.8, min_features=0)


# ---------------------------------------------------------------------------
# triangulation analysis


def test_pure_yaw_jacobian_matches_small_angle_form():
    dyaw, r = 0.01, 5.0
    A, full = triangulation_jacobian(PureYaw(dyaw), PolarLandmark(0.2, r))
    expected = np.array([[math.cos(dyaw), math.sin(dyaw) / r],
                         [-r * math.sin(dyaw), math.cos(dyaw)]])
    np.testing.assert_allclose(A, expected, atol=1e-12)
    assert full


def test_pure_x_jacobian_matches_case_formula():
    # substitute into the pure-x case: q = (r cos b - dx, r sin b)
    dx, b, r = 0.5, math.pi / 6, 4.0
    A, full = triangulation_jacobian(PureX(dx), PolarLandmark(b, r))
    qx, qy = r * math.cos(b) - dx, r * math.sin(b)
    d2, d1 = qx * qx + qy * qy, math.hypot(qx, qy)
    expected = np.array([
        [(r * r - r * dx * math.cos(b)) / d2, -dx * math.sin(b) / d2],
        [r * dx * math.sin(b) / d1, (r - dx * math.cos(b)) / d1],
    ])
    np.testing.assert_allclose(A, expected, atol=1e-12)
    assert full


def test_pure_y_jacobian_matches_case_formula():
    dy, b, r = 0.4, 0.3, 5.0
    A, full = triangulation_jacobian(PureY(dy), PolarLandmark(b, r))
    qx, qy = r * math.cos(b), r * math.sin(b) - dy
    d2, d1 = qx * qx + qy * qy, math.hypot(qx, qy)
    expected = np.array([
        [(r * r - r * dy * math.sin(b)) / d2, dy * math.cos(b) / d2],
        [-r * dy * math.cos(b) / d1, (r - dy * math.sin(b)) / d1],
    ])
    np.testing.assert_allclose(A, expected, atol=1e-12)
    assert full


def test_no_motion_still_full_rank():
    # boundary case: the matrix reduces to the landmark Jacobian at identity
    A, full = triangulation_jacobian(Composite(0.0, 0.0, 0.0), PolarLandmark(0.1, 3.0))
    np.testing.assert_allclose(A, np.eye(2), atol=1e-12)
    assert full


def test_rank_ratio_over_admissible_motions():
    rng = np.random.default_rng(101)
    motions = [PureX(0.5), PureX(-0.3), PureY(0.4), PureY(-0.5), PureYaw(1e-3), PureYaw(0.1)]
    motions += [Composite(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                          rng.uniform(-0.1, 0.1)) for _ in range(100)]
    for motion in motions:
        for _ in range(5):
            lm = PolarLandmark(rng.uniform(-0.7, 0.7), rng.uniform(1.0, 8.5))
            A, full = triangulation_jacobian(motion, lm)
            s = np.linalg.svd(A, compute_uv=False)
            assert s[-1] / s[0] > 1e-6
            assert full


def test_triangulate_pure_x_recovers_cartesian_truth():
    truth = np.array([3.0, 1.0])
    b, r = math.atan2(truth[1], truth[0]), float(np.hypot(*truth))
    pose_b = motion_pose(PureX(0.5))
    z_a = (b, r)
    z_b = predict(pose_b, PolarLandmark(b, r))
    lm = triangulate_landmark(pose_b, z_a, z_b)
    rec = np.array([lm.range_m * math.cos(lm.bearing), lm.range_m * math.sin(lm.bearing)])
    np.testing.assert_allclose(rec, truth, atol=1e-8)


def test_triangulate_pure_yaw_recovers_truth():
    lm_true = PolarLandmark(0.3, 6.0)
    pose_b = motion_pose(PureYaw(0.05))
    z_a = (lm_true.bearing, lm_true.range_m)
    z_b = predict(pose_b, lm_true)
    lm = triangulate_landmark(pose_b, z_a, z_b)
    assert lm.bearing == pytest.approx(lm_true.bearing, abs=1e-10)
    assert lm.range_m == pytest.approx(lm_true.range_m, abs=1e-10)


def test_triangulate_init_at_truth_is_fixed_point():
    lm_true = PolarLandmark(-0.2, 4.0)
    pose_b = motion_pose(Composite(0.3, -0.2, 0.02))
    z_a = (lm_true.bearing, lm_true.range_m)
    z_b = predict(pose_b, lm_true)
    lm = triangulate_landmark(pose_b, z_a, z_b, init=lm_true, max_iterations=1)
    assert lm.bearing == pytest.approx(lm_true.bearing, abs=1e-12)
    assert lm.range_m == pytest.approx(lm_true.range_m, abs=1e-12)
