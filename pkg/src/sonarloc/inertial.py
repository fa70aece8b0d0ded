"""IMU kinematics: numeric pre-integration of pose increments between sonar frames.

High-rate gyro/accelerometer samples between two consecutive sonar frames are
compressed into a single relative pose increment with a covariance, which then
becomes the odometry factor between the two frames. Integration uses the
midpoint rule over raw samples with known (per-run) biases subtracted and
gravity compensated.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonPositiveDefiniteError, StreamError
from .geometry import MODE_2D, Pose, euler_zyx, so3_exp

GRAVITY = np.array([0.0, 0.0, -9.81])

IMU_CSV_HEADER = ["t", "wx", "wy", "wz", "ax", "ay", "az"]


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: measured body angular velocity and linear acceleration."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))


@dataclass(frozen=True)
class ImuIntrinsics:
    """Fixed per-run IMU parameters: biases, noise densities and gravity."""

    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, dtype=float))
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, dtype=float))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        if self.gyro_noise < 0.0 or self.accel_noise < 0.0:
            raise StreamError("noise densities must be non-negative")


@dataclass(frozen=True)
class PoseIncrement:
    """Relative motion over one inter-frame interval, in the start frame.

    ``delta_p`` and ``delta_v`` are expressed in the frame the integration
    started in; ``delta_rotation`` is the relative body rotation. The 6x6
    covariance is ordered (rot x, rot y, rot z, x, y, z).
    """

    delta_p: np.ndarray
    delta_v: np.ndarray
    delta_rotation: np.ndarray
    dt: float
    cov: np.ndarray

    def __post_init__(self):
        if not self.dt > 0.0:
            raise StreamError("increment interval must be positive")
        c = np.asarray(self.cov, dtype=float)
        if c.shape != (6, 6) or np.linalg.norm(c - c.T) > 1e-9:
            raise StreamError("increment covariance must be a symmetric 6x6 matrix")
        if np.min(np.linalg.eigvalsh(c)) < -1e-12:
            raise StreamError("increment covariance must be positive semi-definite")


def preintegrate(samples, intrinsics: ImuIntrinsics, start_velocity,
                 start_rotation: np.ndarray | None = None) -> PoseIncrement:
    """Integrate an ordered IMU sample stream into a single pose increment.

    Args:
        samples: at least two samples spanning the inter-frame interval,
            with strictly increasing timestamps.
        intrinsics: biases, noise densities and the gravity vector expressed
            in the integration frame.
        start_velocity: velocity at the first sample, integration frame.
        start_rotation: attitude at the first sample (defaults to identity,
            i.e. integration happens in the start body frame).

    Returns:
        The pose increment over [t_first, t_last] with a first-order
        diagonal covariance grown proportionally to the interval length.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise StreamError("pre-integration needs at least two samples")
    times = np.array([s.t for s in samples])
    if np.any(np.diff(times) <= 0.0):
        raise StreamError("sample timestamps must be strictly increasing")

    R0 = np.eye(3) if start_rotation is None else np.asarray(start_rotation, dtype=float)
    R = R0.copy()
    v = np.asarray(start_velocity, dtype=float).copy()
    v0 = v.copy()
    p = np.zeros(3)
    g = intrinsics.gravity

    for a, b in zip(samples[:-1], samples[1:]):
        dt = b.t - a.t
        w = 0.5 * (a.gyro + b.gyro) - intrinsics.gyro_bias
        acc = 0.5 * (a.accel + b.accel) - intrinsics.accel_bias
        R_half = R @ so3_exp(w * (0.5 * dt))
        a_world = R_half @ acc + g
        v_new = v + a_world * dt
        p = p + 0.5 * (v + v_new) * dt
        v = v_new
        R = R @ so3_exp(w * dt)

    span = float(times[-1] - times[0])
    cov = np.diag([intrinsics.gyro_noise ** 2 * span] * 3
                  + [intrinsics.accel_noise ** 2 * span] * 3)
    return PoseIncrement(delta_p=p, delta_v=v - v0, delta_rotation=R0.T @ R,
                         dt=span, cov=cov)


def compose_increments(first: PoseIncrement, second: PoseIncrement) -> PoseIncrement:
    """Chain two increments integrated back to back (split-stream composition)."""
    return PoseIncrement(
        delta_p=first.delta_p + second.delta_p,
        delta_v=first.delta_v + second.delta_v,
        delta_rotation=first.delta_rotation @ second.delta_rotation,
        dt=first.dt + second.dt,
        cov=first.cov + second.cov,
    )


def increment_to_odometry(inc: PoseIncrement, mode: str, cov: np.ndarray | None = None):
    """Package a pose increment as the relative-pose odometry factor payload.

    In 2D mode the increment is marginalized to (dyaw, dx, dy) and the
    covariance to the matching 3x3 block. A covariance override replaces the
    propagated one (per-factor noise is usually specified directly).
    """
    from .estimation import OdometryMeasurement  # local import avoids a cycle

    yaw, pitch, roll = euler_zyx(inc.delta_rotation)
    if mode == MODE_2D:
        rel = Pose.planar(yaw, float(inc.delta_p[0]), float(inc.delta_p[1]))
        lam = inc.cov[np.ix_([2, 3, 4], [2, 3, 4])] if cov is None else np.asarray(cov, dtype=float)
    else:
        rel = Pose(yaw, pitch, roll, *inc.delta_p)
        lam = inc.cov if cov is None else np.asarray(cov, dtype=float)
    if np.min(np.linalg.eigvalsh(lam)) <= 0.0:
        raise NonPositiveDefiniteError("odometry covariance must be positive definite")
    return OdometryMeasurement(relative=rel, cov=lam)


def save_imu_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IMU_CSV_HEADER)
        for s in samples:
            writer.writerow([repr(float(s.t))]
                            + [repr(float(x)) for x in s.gyro]
                            + [repr(float(x)) for x in s.accel])


def load_imu_csv(path) -> list[ImuSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != IMU_CSV_HEADER:
            raise StreamError(f"unexpected IMU CSV header in {Path(path).name}: {header}")
        for row in reader:
            vals = [float(x) for x in row]
            samples.append(ImuSample(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
    return samples


def split_by_frames(samples: list[ImuSample], frame_times) -> list[list[ImuSample]]:
    """Cut a concatenated sample stream back into per-interval streams.

    Rows carry the constant body rates of the sampling period they close, so
    each interval (t_{i-1}, t_i] is prepended with a boundary sample copying
    the first in-interval row.
    """
    out = []
    for t0, t1 in zip(frame_times[:-1], frame_times[1:]):
        rows = [s for s in samples if t0 < s.t <= t1 + 1e-12]
        if not rows:
            raise StreamError(f"no IMU samples inside interval ({t0}, {t1}]")
        out.append([ImuSample(t0, rows[0].gyro, rows[0].accel)] + rows)
    return out
