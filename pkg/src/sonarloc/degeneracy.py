"""Solvability counting, singular-value frame classification, and the
single-landmark triangulation analysis for planar sonar motion."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AssemblyError, ConfigError, TriangulationError
from .estimation import LinearSystem, jacobian_landmark, predict
from .geometry import MODE_2D, MODE_3D, PolarLandmark, Pose, wrap_angle

RANK_TOLERANCE = 1e-8  # sigma_min > tol * sigma_max counts as full rank


class Classification(str, Enum):
    UNDER_CONSTRAINED = "under_constrained"
    NORMAL = "normal"
    KEYFRAME = "keyframe"


@dataclass(frozen=True)
class DegeneracyThresholds:
    """Frame-classification thresholds.

    ``sigma_high`` is conventionally 5-8x ``sigma_low``; ``min_features`` is
    the two-view solvability count (2 in 2D, 6 in 3D). Zeros disable the
    corresponding rule, which is how the plain two-view baseline is run.
    """

    sigma_low: float = 0.13
    sigma_high: float = 0.8
    min_features: int = 2

    def __post_init__(self):
        if self.sigma_low < 0.0 or self.sigma_high <= self.sigma_low:
            raise ConfigError("thresholds must satisfy 0 <= sigma_low < sigma_high")
        if self.min_features < 0:
            raise ConfigError("min_features must be non-negative")


@dataclass(frozen=True)
class ConstraintReport:
    """SVD spectrum of a two-view system plus the resulting classification."""

    spectrum: np.ndarray
    sigma_min: float
    n_features: int | None = None
    classification: Classification | None = None


def min_feature_count(mode: str) -> int:
    """Minimum co-observed landmark count for a solvable two-view problem.

    Each landmark contributes 4 equations (two views, two polar components)
    against its own unknowns plus the relative-pose unknowns: 4M >= 6 + 3M
    in 3D and 4M >= 3 + 2M in 2D.
    """
    if mode == MODE_3D:
        return 6
    if mode == MODE_2D:
        return 2
    raise ConfigError(f"unknown mode {mode!r}")


def count_sufficient(n_features: int, mode: str) -> bool:
    return n_features >= min_feature_count(mode)


def singular_spectrum(a: np.ndarray) -> np.ndarray:
    """Descending singular values of a matrix, zero-padded to the column count."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise AssemblyError("cannot take the spectrum of an empty matrix")
    if not np.all(np.isfinite(a)):
        raise AssemblyError("matrix contains non-finite entries")
    s = np.linalg.svd(a, compute_uv=False)
    if s.size < a.shape[1]:
        s = np.concatenate([s, np.zeros(a.shape[1] - s.size)])
    return s


def min_singular_value(system: LinearSystem) -> ConstraintReport:
    """Spectrum of a linearized system's whitened Jacobian."""
    s = singular_spectrum(system.a)
    return ConstraintReport(spectrum=s, sigma_min=float(s[-1]))


def classify_frame(n_features: int, sigma_min: float,
                   thresholds: DegeneracyThresholds) -> Classification:
    """Under-constrained if the feature count or sigma_min is below threshold,
    keyframe if sigma_min clears the high bar, normal otherwise."""
    if n_features < thresholds.min_features or sigma_min < thresholds.sigma_low:
        return Classification.UNDER_CONSTRAINED
    if sigma_min > thresholds.sigma_high:
        return Classification.KEYFRAME
    return Classification.NORMAL


# ---------------------------------------------------------------------------
# Proposition-style triangulation analysis (planar single landmark)


@dataclass(frozen=True)
class PureX:
    dx: float


@dataclass(frozen=True)
class PureY:
    dy: float


@dataclass(frozen=True)
class PureYaw:
    dyaw: float


@dataclass(frozen=True)
class Composite:
    dx: float
    dy: float
    dyaw: float


Motion = PureX | PureY | PureYaw | Composite


def motion_pose(motion: Motion) -> Pose:
    if isinstance(motion, PureX):
        return Pose.planar(0.0, motion.dx, 0.0)
    if isinstance(motion, PureY):
        return Pose.planar(0.0, 0.0, motion.dy)
    if isinstance(motion, PureYaw):
        return Pose.planar(motion.dyaw, 0.0, 0.0)
    if isinstance(motion, Composite):
        return Pose.planar(motion.dyaw, motion.dx, motion.dy)
    raise ConfigError(f"unknown motion {motion!r}")


def _polar_jacobian_2d(q: np.ndarray) -> np.ndarray:
    rho2 = q[0] * q[0] + q[1] * q[1]
    n = math.sqrt(rho2)
    if n < 1e-12:
        raise TriangulationError("landmark collapsed onto the sonar origin")
    return np.array([[-q[1] / rho2, q[0] / rho2], [q[0] / n, q[1] / n]])


def _back_project_2d(landmark: PolarLandmark) -> np.ndarray:
    return np.array([landmark.range_m * math.cos(landmark.bearing),
                     landmark.range_m * math.sin(landmark.bearing)])


def _polar_derivative_2d(landmark: PolarLandmark) -> np.ndarray:
    b, r = landmark.bearing, landmark.range_m
    return np.array([[-r * math.sin(b), math.cos(b)], [r * math.cos(b), math.sin(b)]])


def triangulation_jacobian(motion: Motion, landmark: PolarLandmark) -> tuple[np.ndarray, bool]:
    """2x2 landmark Jacobian for one small planar motion step, plus a rank verdict.

    Pure translations use the shifted reprojection point; the pure-yaw case
    follows the small-angle construction, which evaluates the polar
    derivative at the unrotated point and reduces to
    [[cos dyaw, sin dyaw / r], [-r sin dyaw, cos dyaw]]. Composite motions
    use the exact chain. The verdict is sigma_min > 1e-8 * sigma_max.
    """
    p = _back_project_2d(landmark)
    if isinstance(motion, PureX):
        q = p - np.array([motion.dx, 0.0])
        A = _polar_jacobian_2d(q) @ _polar_derivative_2d(landmark)
    elif isinstance(motion, PureY):
        q = p - np.array([0.0, motion.dy])
        A = _polar_jacobian_2d(q) @ _polar_derivative_2d(landmark)
    elif isinstance(motion, PureYaw):
        c, s = math.cos(motion.dyaw), math.sin(motion.dyaw)
        Rz = np.array([[c, -s], [s, c]])
        A = _polar_jacobian_2d(p) @ Rz @ _polar_derivative_2d(landmark)
    else:
        A = jacobian_landmark(motion_pose(motion), landmark)
    s = np.linalg.svd(A, compute_uv=False)
    return A, bool(s[-1] > RANK_TOLERANCE * s[0])


def triangulate_landmark(pose_b: Pose, observed_a, observed_b,
                         init: PolarLandmark | None = None,
                         tolerance: float = 1e-12,
                         max_iterations: int = 50) -> PolarLandmark:
    """Gauss-Newton triangulation of a planar landmark from two known poses.

    The landmark lives in the first frame; ``observed_a`` doubles as the
    default linearization point and ``observed_b`` is re-predicted through
    the relative pose each iteration. Raises ``TriangulationError`` when the
    2x2 system is rank deficient for the given motion.
    """
    if pose_b.mode != MODE_2D:
        raise ConfigError("triangulation analysis is planar")
    lm = init or PolarLandmark(float(observed_a[0]), float(observed_a[1]))
    z_b = np.array([float(observed_b[0]), float(observed_b[1])])
    for _ in range(max_iterations):
        b, r = predict(pose_b, lm)
        res = np.array([wrap_angle(z_b[0] - b), z_b[1] - r])
        A = jacobian_landmark(pose_b, lm)
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= RANK_TOLERANCE * s[0]:
            raise TriangulationError("triangulation Jacobian is rank deficient")
        delta = np.linalg.solve(A, res)
        lm = PolarLandmark(wrap_angle(lm.bearing + delta[0]),
                           max(lm.range_m + delta[1], 1e-9),
                           anchor_id=lm.anchor_id)
        if np.max(np.abs(delta)) < tolerance:
            break
    return lm
