"""Rigid-body poses, the polar sonar projection model, and small SO(3) helpers.

Angles follow the Z-Y-X (yaw, pitch, roll) convention throughout; all angles
are kept normalized to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneratePointError

TWO_PI = 2.0 * math.pi

MODE_2D = "2d"
MODE_3D = "3d"


def wrap_angle(a: float) -> float:
    # maps any angle into (-pi, pi]
    return -((math.pi - a) % TWO_PI - math.pi)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    # Rodrigues formula with a series fallback for tiny angles
    th = float(np.linalg.norm(w))
    W = skew(w)
    if th < 1e-10:
        return np.eye(3) + W + 0.5 * (W @ W)
    A = math.sin(th) / th
    B = (1.0 - math.cos(th)) / (th * th)
    return np.eye(3) + A * W + B * (W @ W)


def rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    # inverse of rotation_zyx, guarded near the pitch singularity
    sp = -R[2, 0]
    cp = math.sqrt(max(0.0, 1.0 - sp * sp))
    pitch = math.atan2(sp, cp)
    if cp > 1e-9:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:
        yaw = math.atan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return wrap_angle(yaw), wrap_angle(pitch), wrap_angle(roll)


@dataclass(frozen=True)
class Pose:
    """SE(3) element parameterized by ZYX Euler angles and a translation.

    The ``mode`` flag selects the planar subgroup: in 2D pitch, roll and z
    are forced to exactly zero and the local tangent space has 3 degrees of
    freedom (yaw, body-x, body-y) instead of 6.
    """

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    mode: str = MODE_3D

    def __post_init__(self):
        if self.mode not in (MODE_2D, MODE_3D):
            raise ConfigError(f"unknown pose mode {self.mode!r}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if self.mode == MODE_2D:
            if abs(self.pitch) > 0.0 or abs(self.roll) > 0.0 or abs(self.z) > 0.0:
                raise ConfigError("2d poses must have zero pitch, roll and z")
        else:
            object.__setattr__(self, "pitch", wrap_angle(self.pitch))
            object.__setattr__(self, "roll", wrap_angle(self.roll))

    @classmethod
    def identity(cls, mode: str = MODE_3D) -> "Pose":
        return cls(mode=mode)

    @classmethod
    def planar(cls, yaw: float, x: float, y: float) -> "Pose":
        return cls(yaw=yaw, x=x, y=y, mode=MODE_2D)

    @classmethod
    def from_rotation(cls, R: np.ndarray, t, mode: str = MODE_3D) -> "Pose":
        yaw, pitch, roll = euler_zyx(np.asarray(R, dtype=float))
        t = np.asarray(t, dtype=float)
        if mode == MODE_2D:
            return cls.planar(yaw, float(t[0]), float(t[1]))
        return cls(yaw, pitch, roll, float(t[0]), float(t[1]), float(t[2]), mode)

    @property
    def dof(self) -> int:
        return 3 if self.mode == MODE_2D else 6

    def rotation(self) -> np.ndarray:
        return rotation_zyx(self.yaw, self.pitch, self.roll)

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def compose(self, other: "Pose") -> "Pose":
        if other.mode != self.mode:
            raise ConfigError("cannot compose poses with different modes")
        if self.mode == MODE_2D:
            c, s = math.cos(self.yaw), math.sin(self.yaw)
            return Pose.planar(
                wrap_angle(self.yaw + other.yaw),
                self.x + c * other.x - s * other.y,
                self.y + s * other.x + c * other.y,
            )
        R = self.rotation() @ other.rotation()
        t = self.translation() + self.rotation() @ other.translation()
        return Pose.from_rotation(R, t, self.mode)

    def inverse(self) -> "Pose":
        if self.mode == MODE_2D:
            c, s = math.cos(self.yaw), math.sin(self.yaw)
            return Pose.planar(-self.yaw, -(c * self.x + s * self.y), -(-s * self.x + c * self.y))
        Rt = self.rotation().T
        return Pose.from_rotation(Rt, -Rt @ self.translation(), self.mode)

    def transform_into(self, p) -> np.ndarray:
        # world/anchor coordinates -> this pose's body frame: R^T (p - t)
        return self.rotation().T @ (np.asarray(p, dtype=float) - self.translation())

    def transform_from(self, p) -> np.ndarray:
        # body frame -> world/anchor coordinates: R p + t
        return self.rotation() @ np.asarray(p, dtype=float) + self.translation()

    def retract(self, delta: np.ndarray) -> "Pose":
        """Apply a local body-frame increment (rotation part first).

        2D: delta = (dyaw, dx_body, dy_body); 3D: delta = (rotation vector,
        body translation), each of length 3.
        """
        delta = np.asarray(delta, dtype=float)
        if self.mode == MODE_2D:
            if delta.shape != (3,):
                raise ConfigError("2d pose update must have 3 entries")
            c, s = math.cos(self.yaw), math.sin(self.yaw)
            return Pose.planar(
                wrap_angle(self.yaw + delta[0]),
                self.x + c * delta[1] - s * delta[2],
                self.y + s * delta[1] + c * delta[2],
            )
        if delta.shape != (6,):
            raise ConfigError("3d pose update must have 6 entries")
        R = self.rotation() @ so3_exp(delta[:3])
        t = self.translation() + self.rotation() @ delta[3:]
        return Pose.from_rotation(R, t, self.mode)


@dataclass(frozen=True)
class PolarLandmark:
    """A landmark in sonar spherical coordinates, tied to an anchor pose frame."""

    bearing: float
    range_m: float
    elevation: float = 0.0
    anchor_id: int = 0

    def __post_init__(self):
        if not self.range_m > 0.0:
            raise ConfigError(f"landmark range must be positive, got {self.range_m}")

    @property
    def dof(self) -> int:
        return 2 if self.elevation == 0.0 else 3


@dataclass(frozen=True)
class SonarIntrinsics:
    """Field-of-view box of the imaging sonar: range window, bearing and elevation FOV."""

    range_m: tuple[float, float] = (0.5, 9.0)
    bearing_rad: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    elevation_rad: tuple[float, float] = (-math.pi / 18, math.pi / 18)

    def __post_init__(self):
        if not 0.0 < self.range_m[0] < self.range_m[1]:
            raise ConfigError("range window must satisfy 0 < r_min < r_max")
        if not self.bearing_rad[0] < self.bearing_rad[1]:
            raise ConfigError("bearing FOV is empty")
        if not self.elevation_rad[0] < self.elevation_rad[1]:
            raise ConfigError("elevation FOV is empty")
        if self.elevation_rad[1] - self.elevation_rad[0] > math.pi / 2:
            raise ConfigError("elevation aperture must be narrow (<= pi/2)")

    def contains(self, bearing: float, range_m: float, elevation: float = 0.0) -> bool:
        return (
            self.range_m[0] <= range_m <= self.range_m[1]
            and self.bearing_rad[0] <= bearing <= self.bearing_rad[1]
            and self.elevation_rad[0] <= elevation <= self.elevation_rad[1]
        )


def project(p) -> tuple[float, float]:
    """Project a Cartesian point in the sonar frame to (bearing, range).

    The elevation angle is discarded: every point on the same elevation arc
    maps to the same polar pixel.
    """
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    if r < 1e-12:
        raise DegeneratePointError("cannot project a point at the sonar origin")
    return math.atan2(p[1], p[0]), r


def back_project(landmark: PolarLandmark) -> np.ndarray:
    """Lift a polar landmark back to Cartesian coordinates in its anchor frame."""
    b, r, e = landmark.bearing, landmark.range_m, landmark.elevation
    return np.array([
        r * math.cos(b) * math.cos(e),
        r * math.sin(b) * math.cos(e),
        r * math.sin(e),
    ])


def elevation_of(p) -> float:
    p = np.asarray(p, dtype=float)
    return math.atan2(p[2], math.hypot(p[0], p[1]))
