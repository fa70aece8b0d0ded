"""Factor-graph estimation core: residuals, analytic whitened Jacobians,
stacked linear systems and the Gauss-Newton / Levenberg-Marquardt solver.

The state holds poses (one fixed as the gauge reference) and landmarks in
polar coordinates anchored at a fixed reference frame. Sonar factors predict
a (bearing, range) observation of a landmark from an observing pose;
odometry factors constrain consecutive poses with a relative-pose
measurement. Pose updates live in the local body frame (rotation first),
so the sonar pose Jacobian takes the closed form
``[d h/d q] [skew(q) | -I]`` with q the reprojected point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssemblyError,
    ConfigError,
    DegeneratePointError,
    DivergenceError,
    NonPositiveDefiniteError,
    SingularSystemError,
)
from .geometry import (
    MODE_2D,
    MODE_3D,
    PolarLandmark,
    Pose,
    back_project,
    project,
    skew,
    wrap_angle,
)


# ---------------------------------------------------------------------------
# measurements


def _check_spd(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{what} covariance must be square")
    if np.linalg.norm(m - m.T) > 1e-9 * max(1.0, np.linalg.norm(m)):
        raise NonPositiveDefiniteError(f"{what} covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(m)) <= 0.0:
        raise NonPositiveDefiniteError(f"{what} covariance must be positive definite")
    return m


@dataclass(frozen=True)
class SonarMeasurement:
    """One observed (bearing, range) return with its 2x2 covariance."""

    bearing: float
    range_m: float
    cov: np.ndarray
    pose_id: int
    landmark_id: int

    def __post_init__(self):
        object.__setattr__(self, "cov", _check_spd(self.cov, "sonar"))

    @property
    def z(self) -> np.ndarray:
        return np.array([self.bearing, self.range_m])


@dataclass(frozen=True)
class OdometryMeasurement:
    """Relative pose between consecutive frames with its covariance."""

    relative: Pose
    cov: np.ndarray

    def __post_init__(self):
        cov = _check_spd(self.cov, "odometry")
        if cov.shape[0] != self.relative.dof:
            raise ConfigError("odometry covariance dimension must match the pose DOF")
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class OdometryFactor:
    from_id: int
    to_id: int
    measurement: OdometryMeasurement


# ---------------------------------------------------------------------------
# prediction and analytic Jacobians


def _relative_pose(graph: "FactorGraph", anchor_id: int, pose_id: int) -> Pose:
    if anchor_id == pose_id:
        return Pose.identity(graph.mode)
    return graph.poses[anchor_id].inverse().compose(graph.poses[pose_id])


def predict(pose: Pose, landmark: PolarLandmark) -> tuple[float, float]:
    """Predicted (bearing, range) of a landmark seen from ``pose``.

    ``pose`` is the relative transform from the landmark's anchor frame to
    the observing frame; the landmark is reprojected through the inverse
    transform and then through the polar projection.
    """
    return project(pose.transform_into(back_project(landmark)))


def residual(meas: SonarMeasurement, pose: Pose, landmark: PolarLandmark) -> np.ndarray:
    """Prediction minus observation, bearing wrapped to (-pi, pi]."""
    b, r = predict(pose, landmark)
    return np.array([wrap_angle(b - meas.bearing), r - meas.range_m])


def _polar_point_jacobian(q: np.ndarray) -> np.ndarray:
    # d (bearing, range) / d q for a Cartesian point q in the sonar frame
    rho2 = q[0] * q[0] + q[1] * q[1]
    n = math.sqrt(rho2 + q[2] * q[2])
    if rho2 < 1e-24 or n < 1e-12:
        raise DegeneratePointError("reprojected point at the sonar origin")
    return np.array([
        [-q[1] / rho2, q[0] / rho2, 0.0],
        [q[0] / n, q[1] / n, q[2] / n],
    ])


def _cartesian_polar_jacobian(landmark: PolarLandmark) -> np.ndarray:
    # d p / d (bearing, range, elevation) of the back-projection
    b, r, e = landmark.bearing, landmark.range_m, landmark.elevation
    cb, sb = math.cos(b), math.sin(b)
    ce, se = math.cos(e), math.sin(e)
    return np.array([
        [-r * ce * sb, cb * ce, -r * cb * se],
        [r * ce * cb, sb * ce, -r * sb * se],
        [0.0, se, r * ce],
    ])


def jacobian_pose(pose: Pose, landmark: PolarLandmark) -> np.ndarray:
    """Sonar-residual Jacobian w.r.t. a local perturbation of the observing pose.

    Columns are ordered rotation first, translation second; 2x6 in 3D mode
    and 2x3 (yaw, body x, body y) in 2D mode. For the fixed reference pose
    the block is zero and never enters the system.
    """
    q = pose.transform_into(back_project(landmark))
    J = _polar_point_jacobian(q) @ np.hstack([skew(q), -np.eye(3)])
    if pose.mode == MODE_2D:
        return J[:, [2, 3, 4]]
    return J


def jacobian_landmark(pose: Pose, landmark: PolarLandmark) -> np.ndarray:
    """Sonar-residual Jacobian w.r.t. the polar landmark coordinates.

    Chain of the polar projection, the inverse rigid transform and the
    back-projection; 2x3 in 3D mode, 2x2 (bearing, range) in 2D mode. At the
    anchor frame itself this reduces to [[1, 0, 0], [0, 1, 0]].
    """
    q = pose.transform_into(back_project(landmark))
    J = _polar_point_jacobian(q) @ pose.rotation().T @ _cartesian_polar_jacobian(landmark)
    if pose.mode == MODE_2D:
        return J[:, :2]
    return J


def _euler_rate_matrix(pitch: float, roll: float) -> np.ndarray:
    # body angular increment -> ZYX Euler angle increment, rows (yaw, pitch, roll)
    cr, sr = math.cos(roll), math.sin(roll)
    cp = math.cos(pitch)
    tp = math.tan(pitch)
    if abs(cp) < 1e-9:
        raise DegeneratePointError("Euler rate matrix singular at pitch = +-pi/2")
    return np.array([
        [0.0, sr / cp, cr / cp],
        [0.0, cr, -sr],
        [1.0, sr * tp, cr * tp],
    ])


def odometry_residual(from_pose: Pose, to_pose: Pose, meas: OdometryMeasurement) -> np.ndarray:
    rel = from_pose.inverse().compose(to_pose)
    z = meas.relative
    if from_pose.mode == MODE_2D:
        return np.array([wrap_angle(rel.yaw - z.yaw), rel.x - z.x, rel.y - z.y])
    return np.array([
        wrap_angle(rel.yaw - z.yaw),
        wrap_angle(rel.pitch - z.pitch),
        wrap_angle(rel.roll - z.roll),
        rel.x - z.x, rel.y - z.y, rel.z - z.z,
    ])


def compose_odometry(first: OdometryMeasurement,
                     second: OdometryMeasurement) -> OdometryMeasurement:
    """Chain two consecutive relative-pose measurements into one.

    The covariance is propagated to first order through the composition
    (2D only; multi-frame windows are planar).
    """
    a, b = first.relative, second.relative
    if a.mode != MODE_2D or b.mode != MODE_2D:
        raise ConfigError("odometry composition is implemented for 2D mode")
    total = a.compose(b)
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    J_a = np.array([
        [1.0, 0.0, 0.0],
        [-sa * b.x - ca * b.y, 1.0, 0.0],
        [ca * b.x - sa * b.y, 0.0, 1.0],
    ])
    J_b = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    cov = J_a @ first.cov @ J_a.T + J_b @ second.cov @ J_b.T
    return OdometryMeasurement(relative=total, cov=cov)


def odometry_jacobians(from_pose: Pose, to_pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the odometry residual w.r.t. local perturbations of both poses."""
    rel = from_pose.inverse().compose(to_pose)
    if from_pose.mode == MODE_2D:
        c, s = math.cos(rel.yaw), math.sin(rel.yaw)
        J_to = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        J_from = np.array([
            [-1.0, 0.0, 0.0],
            [rel.y, -1.0, 0.0],
            [-rel.x, 0.0, -1.0],
        ])
        return J_from, J_to
    E = _euler_rate_matrix(rel.pitch, rel.roll)
    R_rel = rel.rotation()
    t_rel = rel.translation()
    J_to = np.zeros((6, 6))
    J_to[:3, :3] = E
    J_to[3:, 3:] = R_rel
    J_from = np.zeros((6, 6))
    J_from[:3, :3] = -E @ R_rel.T
    J_from[3:, :3] = skew(t_rel)
    J_from[3:, 3:] = -np.eye(3)
    return J_from, J_to


# ---------------------------------------------------------------------------
# whitening


def info_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive-definite covariance."""
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.min(w) <= 0.0:
        raise NonPositiveDefiniteError("covariance must be positive definite to whiten")
    return V @ np.diag(1.0 / np.sqrt(w)) @ V.T


def whiten(block: np.ndarray, res: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale a Jacobian block and residual by the inverse square-root covariance."""
    W = info_sqrt(cov)
    return W @ block, W @ res


# ---------------------------------------------------------------------------
# factor graph and the stacked linear system


class FactorGraph:
    """Container for pose/landmark variables and sonar/odometry factors.

    Exactly one pose is fixed as the gauge reference in two-view problems;
    landmarks must be anchored at a fixed pose so that the analytic Jacobian
    cases (fixed anchor / free observer) cover every factor.
    """

    def __init__(self, mode: str = MODE_2D):
        if mode not in (MODE_2D, MODE_3D):
            raise ConfigError(f"unknown graph mode {mode!r}")
        self.mode = mode
        self.poses: dict[int, Pose] = {}
        self.landmarks: dict[int, PolarLandmark] = {}
        self.sonar_factors: list[SonarMeasurement] = []
        self.odometry_factors: list[OdometryFactor] = []
        self.fixed: set[int] = set()

    def add_pose(self, pose_id: int, pose: Pose, fixed: bool = False) -> None:
        if pose.mode != self.mode:
            raise ConfigError("pose mode does not match graph mode")
        self.poses[pose_id] = pose
        if fixed:
            self.fixed.add(pose_id)

    def add_landmark(self, landmark_id: int, landmark: PolarLandmark) -> None:
        self.landmarks[landmark_id] = landmark

    def add_sonar_factor(self, meas: SonarMeasurement) -> None:
        if meas.pose_id not in self.poses:
            raise ConfigError(f"sonar factor references unknown pose {meas.pose_id}")
        if meas.landmark_id not in self.landmarks:
            raise ConfigError(f"sonar factor references unknown landmark {meas.landmark_id}")
        self.sonar_factors.append(meas)

    def add_odometry_factor(self, from_id: int, to_id: int, meas: OdometryMeasurement) -> None:
        if from_id not in self.poses or to_id not in self.poses:
            raise ConfigError("odometry factor references an unknown pose")
        self.odometry_factors.append(OdometryFactor(from_id, to_id, meas))

    @property
    def pose_dof(self) -> int:
        return 3 if self.mode == MODE_2D else 6

    @property
    def landmark_dof(self) -> int:
        return 2 if self.mode == MODE_2D else 3

    def free_pose_ids(self) -> list[int]:
        return sorted(pid for pid in self.poses if pid not in self.fixed)

    def landmark_ids(self) -> list[int]:
        return sorted(self.landmarks)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "fixed_poses": sorted(self.fixed),
            "poses": {
                str(pid): [p.yaw, p.pitch, p.roll, p.x, p.y, p.z]
                for pid, p in sorted(self.poses.items())
            },
            "landmarks": {
                str(lid): [lm.bearing, lm.range_m, lm.elevation, lm.anchor_id]
                for lid, lm in sorted(self.landmarks.items())
            },
            "sonar_factors": [
                {
                    "pose": m.pose_id,
                    "landmark": m.landmark_id,
                    "bearing": m.bearing,
                    "range": m.range_m,
                    "cov": np.asarray(m.cov).tolist(),
                }
                for m in self.sonar_factors
            ],
            "odometry_factors": [
                {
                    "from": f.from_id,
                    "to": f.to_id,
                    "relative": [f.measurement.relative.yaw, f.measurement.relative.pitch,
                                 f.measurement.relative.roll, f.measurement.relative.x,
                                 f.measurement.relative.y, f.measurement.relative.z],
                    "cov": np.asarray(f.measurement.cov).tolist(),
                }
                for f in self.odometry_factors
            ],
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


@dataclass
class LinearSystem:
    """Whitened stacked system ``A delta = b`` for one linearization point.

    Rows hold one 2-row band per sonar factor (in factor order) followed by
    the odometry bands; columns hold free-pose blocks then landmark blocks,
    both in ascending id order. ``b`` is the whitened (z - h) vector.
    """

    a: np.ndarray
    b: np.ndarray
    columns: dict[tuple[str, int], tuple[int, int]]
    sonar_rows: int

    @property
    def sonar_block(self) -> np.ndarray:
        return self.a[: self.sonar_rows]

    def column_of(self, kind: str, var_id: int) -> tuple[int, int]:
        return self.columns[(kind, var_id)]


def assemble(graph: FactorGraph, include_odometry: bool = True) -> LinearSystem:
    """Linearize every factor at the graph's current estimates.

    Raises ``AssemblyError`` for an empty graph, landmarks anchored at free
    poses, or non-finite entries.
    """
    if not graph.sonar_factors and not (include_odometry and graph.odometry_factors):
        raise AssemblyError("cannot assemble an empty factor graph")

    pose_dof, lm_dof = graph.pose_dof, graph.landmark_dof
    columns: dict[tuple[str, int], tuple[int, int]] = {}
    offset = 0
    for pid in graph.free_pose_ids():
        columns[("pose", pid)] = (offset, pose_dof)
        offset += pose_dof
    for lid in graph.landmark_ids():
        columns[("landmark", lid)] = (offset, lm_dof)
        offset += lm_dof
    n_cols = offset
    if n_cols == 0:
        raise AssemblyError("factor graph has no free variables")

    sonar_rows = 2 * len(graph.sonar_factors)
    odom_rows = pose_dof * len(graph.odometry_factors) if include_odometry else 0
    A = np.zeros((sonar_rows + odom_rows, n_cols))
    b = np.zeros(sonar_rows + odom_rows)

    row = 0
    for meas in graph.sonar_factors:
        landmark = graph.landmarks[meas.landmark_id]
        if landmark.anchor_id not in graph.fixed:
            raise AssemblyError(
                f"landmark {meas.landmark_id} anchored at free pose {landmark.anchor_id}")
        rel = _relative_pose(graph, landmark.anchor_id, meas.pose_id)
        res = residual(meas, rel, landmark)
        W = info_sqrt(meas.cov)
        if ("pose", meas.pose_id) in columns:
            off, dof = columns[("pose", meas.pose_id)]
            A[row:row + 2, off:off + dof] = W @ jacobian_pose(rel, landmark)
        off, dof = columns[("landmark", meas.landmark_id)]
        A[row:row + 2, off:off + dof] = W @ jacobian_landmark(rel, landmark)[:, :dof]
        b[row:row + 2] = W @ (-res)
        row += 2

    if include_odometry:
        for factor in graph.odometry_factors:
            from_pose = graph.poses[factor.from_id]
            to_pose = graph.poses[factor.to_id]
            res = odometry_residual(from_pose, to_pose, factor.measurement)
            J_from, J_to = odometry_jacobians(from_pose, to_pose)
            W = info_sqrt(factor.measurement.cov)
            if ("pose", factor.from_id) in columns:
                off, dof = columns[("pose", factor.from_id)]
                A[row:row + pose_dof, off:off + dof] = W @ J_from
            if ("pose", factor.to_id) in columns:
                off, dof = columns[("pose", factor.to_id)]
                A[row:row + pose_dof, off:off + dof] = W @ J_to
            b[row:row + pose_dof] = W @ (-res)
            row += pose_dof

    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
        raise AssemblyError("linear system contains non-finite entries")
    return LinearSystem(a=A, b=b, columns=columns, sonar_rows=sonar_rows)


def _apply_delta(graph: FactorGraph, delta: np.ndarray, columns) -> None:
    for (kind, var_id), (off, dof) in columns.items():
        d = delta[off:off + dof]
        if kind == "pose":
            graph.poses[var_id] = graph.poses[var_id].retract(d)
        else:
            lm = graph.landmarks[var_id]
            new_elev = lm.elevation + (d[2] if dof == 3 else 0.0)
            graph.landmarks[var_id] = PolarLandmark(
                bearing=wrap_angle(lm.bearing + d[0]),
                range_m=max(lm.range_m + d[1], 1e-6),
                elevation=new_elev,
                anchor_id=lm.anchor_id,
            )


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    tolerance: float = 1e-8          # convergence threshold on ||delta||_inf
    lambda_init: float = 1e-4
    lambda_factor: float = 10.0
    lambda_max: float = 1e12
    rank_tolerance: float = 1e-12    # sigma_min/sigma_max below this is singular
    allow_degenerate: bool = False   # let GN take the minimum-norm step anyway


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    initial_cost: float = math.nan
    final_cost: float = math.nan
    converged: bool = False
    sigma_min_history: list = field(default_factory=list)
    message: str = ""


def solve(graph: FactorGraph, method: str = "gn",
          config: SolverConfig = SolverConfig()) -> SolveReport:
    """Iterate linearize / solve the normal equations / retract until converged.

    ``method`` selects plain Gauss-Newton ("gn", rank-revealing least-squares
    step) or Levenberg-Marquardt ("lm", additive damping: lambda grows by the
    configured factor on a cost increase and shrinks on a decrease). Updates
    are applied to the graph in place; the report carries per-iteration
    minimum singular values of the whitened Jacobian.
    """
    if method not in ("gn", "lm"):
        raise ConfigError(f"unknown solver method {method!r}")
    report = SolveReport(method=method)
    lam = config.lambda_init
    prev_cost = None
    rising = 0

    for it in range(config.max_iterations):
        system = assemble(graph)
        svals = np.linalg.svd(system.a, compute_uv=False)
        if svals.size < system.a.shape[1]:
            # fewer rows than unknowns: the remaining spectrum is zero
            svals = np.concatenate([svals, np.zeros(system.a.shape[1] - svals.size)])
        report.sigma_min_history.append(float(svals[-1]))
        cost = float(system.b @ system.b)
        if it == 0:
            report.initial_cost = cost
        report.final_cost = cost

        if method == "gn":
            if svals[-1] < config.rank_tolerance * max(svals[0], 1e-300):
                if not config.allow_degenerate:
                    raise SingularSystemError(
                        "normal equations are rank deficient; use LM or allow_degenerate")
            delta = np.linalg.lstsq(system.a, system.b, rcond=None)[0]
            if prev_cost is not None and cost > prev_cost * (1.0 + 1e-9):
                rising += 1
                if rising >= 3:
                    raise DivergenceError("Gauss-Newton cost increased on 3 consecutive steps")
            else:
                rising = 0
            _apply_delta(graph, delta, system.columns)
            report.iterations = it + 1
            prev_cost = cost
            if np.max(np.abs(delta)) < config.tolerance:
                report.converged = True
                break
        else:
            H = system.a.T @ system.a
            g = system.a.T @ system.b
            accepted = False
            while lam <= config.lambda_max:
                try:
                    delta = np.linalg.solve(H + lam * np.eye(H.shape[0]), g)
                except np.linalg.LinAlgError:
                    lam *= config.lambda_factor
                    continue
                trial = _copy_graph(graph)
                _apply_delta(trial, delta, system.columns)
                trial_b = assemble(trial).b
                trial_cost = float(trial_b @ trial_b)
                if trial_cost <= cost:
                    _apply_delta(graph, delta, system.columns)
                    lam = max(lam / config.lambda_factor, 1e-12)
                    accepted = True
                    break
                lam *= config.lambda_factor
            report.iterations = it + 1
            if not accepted:
                raise DivergenceError("LM damping exhausted without a cost decrease")
            if np.max(np.abs(delta)) < config.tolerance:
                report.converged = True
                break

    if not report.converged:
        report.message = "iteration limit reached"
    final = assemble(graph)
    report.final_cost = float(final.b @ final.b)
    return report


def _copy_graph(graph: FactorGraph) -> FactorGraph:
    out = FactorGraph(graph.mode)
    out.poses = dict(graph.poses)
    out.landmarks = dict(graph.landmarks)
    out.sonar_factors = graph.sonar_factors
    out.odometry_factors = graph.odometry_factors
    out.fixed = set(graph.fixed)
    return out
