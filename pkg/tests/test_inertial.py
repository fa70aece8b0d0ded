import math

import numpy as np
import pytest

from sonarloc.errors import NonPositiveDefiniteError, StreamError
from sonarloc.geometry import Pose, rotation_zyx
from sonarloc.inertial import (
    GRAVITY,
    ImuIntrinsics,
    ImuSample,
    PoseIncrement,
    compose_increments,
    increment_to_odometry,
    load_imu_csv,
    preintegrate,
    save_imu_csv,
    split_by_frames,
)

INTR = ImuIntrinsics(gyro_noise=1e-3, accel_noise=1e-2)


def constant_stream(t0, t1, n, gyro, accel):
    ts = np.linspace(t0, t1, n)
    return [ImuSample(t, np.asarray(gyro, float), np.asarray(accel, float)) for t in ts]


def test_stationary_stream_gives_zero_increment():
    samples = constant_stream(0.0, 0.5, 26, (0, 0, 0), -GRAVITY)
    inc = preintegrate(samples, INTR, start_velocity=np.zeros(3))
    np.testing.assert_allclose(inc.delta_p, np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(inc.delta_rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(inc.delta_v, np.zeros(3), atol=1e-12)


def test_constant_yaw_rate_closed_form():
    # closed form: constant rate about a fixed axis integrates to yaw = w*dt
    wz, dt = 0.3, 0.5
    samples = constant_stream(0.0, dt, 51, (0, 0, wz), -GRAVITY)
    inc = preintegrate(samples, INTR, start_velocity=np.zeros(3))
    np.testing.assert_allclose(inc.delta_rotation, rotation_zyx(wz * dt, 0, 0), atol=1e-12)
    np.testing.assert_allclose(inc.delta_p, np.zeros(3), atol=1e-12)


def test_constant_acceleration_closed_form():
    # closed form: p = v0*dt + a*dt^2/2 for constant body acceleration
    ax, dt, v0 = 0.8, 0.5, 0.4
    samples = constant_stream(0.0, dt, 26, (0, 0, 0), np.array([ax, 0, 0]) - GRAVITY)
    inc = preintegrate(samples, INTR, start_velocity=np.array([v0, 0.0, 0.0]))
    assert inc.delta_p[0] == pytest.approx(v0 * dt + 0.5 * ax * dt * dt, abs=1e-12)
    assert inc.delta_v[0] == pytest.approx(ax * dt, abs=1e-12)
    np.testing.assert_allclose(inc.delta_p[1:], np.zeros(2), atol=1e-12)


def test_rejects_short_or_unordered_streams():
    with pytest.raises(StreamError):
        preintegrate([ImuSample(0.0, np.zeros(3), np.zeros(3))], INTR, np.zeros(3))
    bad = [ImuSample(0.0, np.zeros(3), np.zeros(3)), ImuSample(0.0, np.zeros(3), np.zeros(3))]
    with pytest.raises(StreamError):
        preintegrate(bad, INTR, np.zeros(3))


def wobble_stream(t0, t1, n):
    # smoothly varying rates so the integration path is non-trivial
    ts = np.linspace(t0, t1, n)
    out = []
    for t in ts:
        gyro = np.array([0.2 * math.sin(3 * t), -0.1 * math.cos(2 * t), 0.4 * math.sin(t)])
        accel = np.array([0.5 * math.cos(t), 0.3 * math.sin(2 * t), -9.81 + 0.1 * math.sin(5 * t)])
        out.append(ImuSample(float(t), gyro, accel))
    return out


def test_split_composition_matches_full_integration():
    samples = wobble_stream(0.0, 1.0, 101)
    v0 = np.array([0.2, -0.1, 0.05])
    full = preintegrate(samples, INTR, v0)
    for k in (17, 50, 83):
        first = preintegrate(samples[: k + 1], INTR, v0)
        mid_rot = first.delta_rotation
        mid_vel = v0 + first.delta_v
        second = preintegrate(samples[k:], INTR, mid_vel, start_rotation=mid_rot)
        both = compose_increments(first, second)
        np.testing.assert_allclose(both.delta_p, full.delta_p, atol=1e-9)
        np.testing.assert_allclose(both.delta_v, full.delta_v, atol=1e-9)
        np.testing.assert_allclose(both.delta_rotation, full.delta_rotation, atol=1e-9)


def test_reverse_applied_increment_returns_start():
    samples = wobble_stream(0.0, 0.8, 81)
    inc = preintegrate(samples, INTR, np.zeros(3))
    start = Pose.planar(0.3, 1.0, 2.0)
    odo = increment_to_odometry(inc, "2d", cov=np.diag([1e-4, 1e-4, 1e-4]))
    moved = start.compose(odo.relative)
    back = moved.compose(odo.relative.inverse())
    np.testing.assert_allclose(
        [back.yaw, back.x, back.y], [start.yaw, start.x, start.y], atol=1e-9)


def test_covariance_trace_grows_with_interval():
    short = preintegrate(wobble_stream(0.0, 0.3, 31), INTR, np.zeros(3))
    long = preintegrate(wobble_stream(0.0, 0.9, 91), INTR, np.zeros(3))
    assert np.trace(long.cov) > np.trace(short.cov)


def test_increment_to_odometry_zero_is_identity():
    inc = PoseIncrement(np.zeros(3), np.zeros(3), np.eye(3), 0.5, np.eye(6) * 1e-6)
    odo = increment_to_odometry(inc, "3d")
    assert odo.relative == Pose.identity()


def test_increment_to_odometry_projects_translation():
    inc = PoseIncrement(np.array([0.1, 0.0, 0.0]), np.zeros(3), np.eye(3), 0.5,
                        np.eye(6) * 1e-6)
    odo = increment_to_odometry(inc, "2d")
    assert (odo.relative.yaw, odo.relative.x, odo.relative.y) == (0.0, 0.1, 0.0)


def test_odometry_covariance_ordering_2d():
    # per-factor noise: 0.02 rad rotational, 0.05 m translational
    inc = PoseIncrement(np.zeros(3), np.zeros(3), np.eye(3), 0.5, np.eye(6))
    lam = np.diag([0.02 ** 2, 0.05 ** 2, 0.05 ** 2])
    odo = increment_to_odometry(inc, "2d", cov=lam)
    np.testing.assert_array_equal(odo.cov, lam)


def test_increment_to_odometry_rejects_zero_covariance():
    inc = PoseIncrement(np.zeros(3), np.zeros(3), np.eye(3), 0.5, np.zeros((6, 6)))
    with pytest.raises(NonPositiveDefiniteError):
        increment_to_odometry(inc, "2d")


def test_imu_csv_round_trip(tmp_path):
    samples = wobble_stream(0.0, 0.4, 11)
    path = tmp_path / "imu.csv"
    save_imu_csv(path, samples)
    loaded = load_imu_csv(path)
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert a.t == b.t
        np.testing.assert_array_equal(a.gyro, b.gyro)
        np.testing.assert_array_equal(a.accel, b.accel)


def test_split_by_frames_zero_order_hold():
    # constant-rate rows split back into per-interval streams that integrate
    # to the same increments as the originals
    g1, a1 = np.array([0, 0, 0.2]), -GRAVITY
    g2, a2 = np.zeros(3), np.array([0.5, 0, 0]) - GRAVITY
    rows = [ImuSample(0.0, g1, a1)]
    rows += [ImuSample(t, g1, a1) for t in np.linspace(0.1, 0.5, 5)]
    rows += [ImuSample(t, g2, a2) for t in np.linspace(0.6, 1.0, 5)]
    streams = split_by_frames(rows, [0.0, 0.5, 1.0])
    assert len(streams) == 2
    assert streams[1][0].t == 0.5
    np.testing.assert_array_equal(streams[1][0].accel, a2)
    inc = preintegrate(streams[1], INTR, np.zeros(3))
    assert inc.delta_p[0] == pytest.approx(0.5 * 0.5 * 0.25, abs=1e-12)
