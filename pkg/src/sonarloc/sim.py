"""Deterministic synthetic world: a square survey path through a landmark
field, noisy sonar/odometry synthesis, sparsity gaps, and wrong-association
injection.

The vehicle follows a square of pure-x/pure-y translation legs joined by
stop-and-rotate yaw corners, so every inter-frame motion stays inside the
set for which single-landmark triangulation is provably well posed. The
default landmark layout reproduces the qualitative structure of the sparse
-feature experiment: 28 landmarks of which 25 are ever measured, two
windows where the matched-feature count drops to one, and a corner cluster
arranged so that the canonical wrong-association injection (frame 50,
landmarks 6->1 and 7->8) produces duplicate factor bands.
"""
from __future__ import annotations

import ast
import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .geometry import MODE_2D, Pose, SonarIntrinsics, project, wrap_angle
from .inertial import GRAVITY, ImuSample

# landmark ids are 1-based; entries 26-28 sit beyond sensor reach and are
# never swept by the forward-looking field of view
DEFAULT_LANDMARKS: tuple[tuple[float, float], ...] = (
    (16.0, 1.0),    # 1: corner-1 far pair, on the same ray as 8
    (7.0, 0.8),     # 2
    (7.8, -0.9),    # 3
    (8.6, 0.7),     # 4
    (9.2, -0.6),    # 5
    (11.3, -1.0),   # 6: corner-1 near cluster
    (11.8, 1.4),    # 7: corner-1 near cluster
    (17.8, 1.3),    # 8: corner-1 far pair, on the same ray as 1
    (10.6, 3.6),    # 9
    (9.2, 4.1),     # 10
    (10.8, 4.6),    # 11
    (10.9, 9.6),    # 12: lone landmark of sparsity window A
    (11.6, 13.8),   # 13
    (7.6, 13.1),    # 14
    (5.9, 13.0),    # 15
    (4.8, 9.0),     # 16
    (4.2, 9.4),     # 17
    (-4.0, 8.6),    # 18: lone landmark of sparsity window B
    (-4.3, 6.4),    # 19
    (1.2, 6.6),     # 20
    (3.5, 11.1),    # 21
    (-0.8, 2.7),    # 22
    (0.6, 1.0),     # 23
    (-0.7, -0.9),   # 24
    (0.5, -2.8),    # 25
    (-7.0, 2.5),    # 26: never within range
    (2.5, 17.0),    # 27: never within range
    (17.0, 7.5),    # 28: never within range
)

DEFAULT_INJECTIONS: tuple[tuple[int, int, int], ...] = ((50, 6, 1), (50, 7, 8))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that determines a synthetic run: path, landmarks, noise, seed."""

    seed: int = 7
    mode: str = MODE_2D
    side_length_m: float = 10.0
    frame_spacing_m: float = 0.2
    corner_steps: int = 6
    frame_dt_s: float = 0.5
    intrinsics: SonarIntrinsics = field(default_factory=SonarIntrinsics)
    sonar_bearing_sigma: float = 0.02
    sonar_range_sigma: float = 0.05
    odom_rot_sigma: float = 0.02
    odom_trans_sigma: float = 0.05
    landmarks: tuple[tuple[float, float], ...] = DEFAULT_LANDMARKS
    injections: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if self.side_length_m <= 0 or self.frame_spacing_m <= 0:
            raise ConfigError("side length and frame spacing must be positive")
        if self.corner_steps < 1:
            raise ConfigError("corner_steps must be at least 1")
        for sigma in (self.sonar_bearing_sigma, self.sonar_range_sigma,
                      self.odom_rot_sigma, self.odom_trans_sigma):
            if sigma < 0:
                raise ConfigError("noise sigmas must be non-negative")

    def to_mapping(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "trajectory.side_length_m": self.side_length_m,
            "trajectory.frame_spacing_m": self.frame_spacing_m,
            "trajectory.corner_steps": self.corner_steps,
            "trajectory.frame_dt_s": self.frame_dt_s,
            "sonar.range_m": list(self.intrinsics.range_m),
            "sonar.bearing_rad": list(self.intrinsics.bearing_rad),
            "sonar.elevation_rad": list(self.intrinsics.elevation_rad),
            "noise.sonar_bearing_rad": self.sonar_bearing_sigma,
            "noise.sonar_range_m": self.sonar_range_sigma,
            "noise.odom_rot_rad": self.odom_rot_sigma,
            "noise.odom_trans_m": self.odom_trans_sigma,
            "landmarks": [list(p) for p in self.landmarks],
            "injections": [list(i) for i in self.injections],
        }

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioConfig":
        known = {
            "seed", "mode", "trajectory.side_length_m", "trajectory.frame_spacing_m",
            "trajectory.corner_steps", "trajectory.frame_dt_s", "sonar.range_m",
            "sonar.bearing_rad", "sonar.elevation_rad", "noise.sonar_bearing_rad",
            "noise.sonar_range_m", "noise.odom_rot_rad", "noise.odom_trans_m",
            "landmarks", "injections",
        }
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        base = cls()
        intr = SonarIntrinsics(
            range_m=tuple(mapping.get("sonar.range_m", base.intrinsics.range_m)),
            bearing_rad=tuple(mapping.get("sonar.bearing_rad", base.intrinsics.bearing_rad)),
            elevation_rad=tuple(mapping.get("sonar.elevation_rad", base.intrinsics.elevation_rad)),
        )
        return cls(
            seed=int(mapping.get("seed", base.seed)),
            mode=str(mapping.get("mode", base.mode)),
            side_length_m=float(mapping.get("trajectory.side_length_m", base.side_length_m)),
            frame_spacing_m=float(mapping.get("trajectory.frame_spacing_m", base.frame_spacing_m)),
            corner_steps=int(mapping.get("trajectory.corner_steps", base.corner_steps)),
            frame_dt_s=float(mapping.get("trajectory.frame_dt_s", base.frame_dt_s)),
            intrinsics=intr,
            sonar_bearing_sigma=float(mapping.get("noise.sonar_bearing_rad", base.sonar_bearing_sigma)),
            sonar_range_sigma=float(mapping.get("noise.sonar_range_m", base.sonar_range_sigma)),
            odom_rot_sigma=float(mapping.get("noise.odom_rot_rad", base.odom_rot_sigma)),
            odom_trans_sigma=float(mapping.get("noise.odom_trans_m", base.odom_trans_sigma)),
            landmarks=tuple(tuple(float(v) for v in p) for p in mapping.get("landmarks", base.landmarks)),
            injections=tuple(tuple(int(v) for v in i) for i in mapping.get("injections", ())),
        )


@dataclass(frozen=True)
class IntervalSpec:
    """One inter-frame motion step: pure body translation or pure yaw."""

    t0: float
    dt: float
    dyaw: float
    dpos_body: tuple[float, float]
    v0_body: tuple[float, float]


@dataclass
class GroundTruth:
    poses: list[Pose]
    landmarks: dict[int, np.ndarray]
    visible: list[list[int]]
    intervals: list[IntervalSpec]


@dataclass
class Scenario:
    config: ScenarioConfig
    truth: GroundTruth
    measurements: list[list[tuple[int, float, float]]]
    odometry: list[tuple[float, float, float]]   # (dyaw, dx, dy) into frame i+1


def build_trajectory(config: ScenarioConfig) -> tuple[list[Pose], list[IntervalSpec]]:
    """Square path: four translation legs joined by stop-and-rotate corners.

    Translation legs use an alternating-velocity plan (boundary speeds flip
    between 0 and twice the cruise speed) so each step has constant body
    acceleration and is exactly integrable by the midpoint rule.
    """
    n_steps = round(config.side_length_m / config.frame_spacing_m)
    if abs(n_steps * config.frame_spacing_m - config.side_length_m) > 1e-9:
        raise ConfigError("side length must be an integer multiple of the frame spacing")
    d, dt = config.frame_spacing_m, config.frame_dt_s
    poses = [Pose.planar(0.0, 0.0, 0.0)]
    intervals: list[IntervalSpec] = []
    t = 0.0
    for side in range(4):
        for k in range(n_steps):
            v0 = 0.0 if k % 2 == 0 else 2.0 * d / dt
            intervals.append(IntervalSpec(t, dt, 0.0, (d, 0.0), (v0, 0.0)))
            poses.append(poses[-1].compose(Pose.planar(0.0, d, 0.0)))
            t += dt
        if side < 3:
            step = (math.pi / 2) / config.corner_steps
            for _ in range(config.corner_steps):
                intervals.append(IntervalSpec(t, dt, step, (0.0, 0.0), (0.0, 0.0)))
                poses.append(poses[-1].compose(Pose.planar(step, 0.0, 0.0)))
                t += dt
    return poses, intervals


def visible_landmarks(pose: Pose, landmarks: dict[int, np.ndarray],
                      intrinsics: SonarIntrinsics) -> list[tuple[int, float, float]]:
    """Ids and exact polar coordinates of every landmark inside the FOV box."""
    out = []
    for lid in sorted(landmarks):
        p = landmarks[lid]
        q = pose.transform_into((p[0], p[1], 0.0))
        if np.hypot(q[0], q[1]) < 1e-9:
            continue
        bearing, rng = project(q)
        if intrinsics.contains(bearing, rng, 0.0):
            out.append((lid, bearing, rng))
    return out


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Synthesize the ground truth and the noisy measurement/odometry streams.

    Deterministic for a fixed config: a single seeded generator drives, per
    frame, first the odometry perturbation and then the per-landmark sonar
    perturbations in ascending id order. Noisy polar values are clamped back
    into the field-of-view box.
    """
    poses, intervals = build_trajectory(config)
    landmarks = {i + 1: np.array(p, dtype=float) for i, p in enumerate(config.landmarks)}
    for frame, true_id, wrong_id in config.injections:
        if not 0 <= frame < len(poses):
            raise ConfigError(f"injection frame {frame} out of range")
        if true_id not in landmarks or wrong_id not in landmarks:
            raise ConfigError("injection references an unknown landmark id")

    rng = np.random.default_rng(config.seed)
    intr = config.intrinsics
    visible = [visible_landmarks(pose, landmarks, intr) for pose in poses]
    if not any(visible):
        raise ConfigError("no landmark is ever visible from the trajectory")

    measurements: list[list[tuple[int, float, float]]] = []
    odometry: list[tuple[float, float, float]] = []
    for i, pose in enumerate(poses):
        if i > 0:
            rel = poses[i - 1].inverse().compose(pose)
            odometry.append((
                wrap_angle(rel.yaw + rng.normal(0.0, config.odom_rot_sigma)),
                rel.x + rng.normal(0.0, config.odom_trans_sigma),
                rel.y + rng.normal(0.0, config.odom_trans_sigma),
            ))
        frame_meas = []
        for lid, bearing, rng_m in visible[i]:
            b = bearing + rng.normal(0.0, config.sonar_bearing_sigma)
            r = rng_m + rng.normal(0.0, config.sonar_range_sigma)
            b = min(max(b, intr.bearing_rad[0]), intr.bearing_rad[1])
            r = min(max(r, intr.range_m[0]), intr.range_m[1])
            frame_meas.append((lid, b, r))
        measurements.append(frame_meas)

    truth = GroundTruth(poses=poses, landmarks=landmarks,
                        visible=[[lid for lid, _, _ in v] for v in visible],
                        intervals=intervals)
    scenario = Scenario(config=config, truth=truth, measurements=measurements,
                        odometry=odometry)
    if config.injections:
        scenario.measurements = inject_wrong_associations(
            scenario.measurements, config.injections)
    return scenario


def inject_wrong_associations(measurements, injections):
    """Relabel measurements: values stay, the landmark id becomes the wrong one."""
    out = [list(frame) for frame in measurements]
    for frame, true_id, wrong_id in injections:
        if not 0 <= frame < len(out):
            raise ConfigError(f"injection frame {frame} out of range")
        hit = False
        frame_meas = []
        for lid, b, r in out[frame]:
            if lid == true_id:
                frame_meas.append((wrong_id, b, r))
                hit = True
            else:
                frame_meas.append((lid, b, r))
        if not hit:
            raise ConfigError(
                f"landmark {true_id} is not measured at frame {frame}; cannot inject")
        out[frame] = frame_meas
    return out


def imu_stream_for(intervals, rate_hz: float, intrinsics=None) -> list[list[ImuSample]]:
    """Synthesize per-interval IMU streams whose midpoint integration exactly
    reproduces the interval increments.

    Each interval carries constant body rates: translations use the constant
    acceleration matching (displacement, start velocity), corners a constant
    yaw rate; the accelerometer reports the specific force, i.e. gravity
    enters with a negative sign.
    """
    gravity = GRAVITY if intrinsics is None else intrinsics.gravity
    streams = []
    for spec in intervals:
        if rate_hz * spec.dt <= 1.0:
            raise ConfigError("IMU rate must exceed the frame rate")
        if spec.dyaw != 0.0 and spec.dpos_body != (0.0, 0.0):
            raise ConfigError("mixed rotation+translation intervals are not supported")
        n = max(2, int(round(rate_hz * spec.dt)))
        times = spec.t0 + np.linspace(0.0, spec.dt, n + 1)
        if spec.dyaw != 0.0:
            gyro = np.array([0.0, 0.0, spec.dyaw / spec.dt])
            accel = -gravity
        else:
            gyro = np.zeros(3)
            d = np.array([spec.dpos_body[0], spec.dpos_body[1], 0.0])
            v0 = np.array([spec.v0_body[0], spec.v0_body[1], 0.0])
            a = 2.0 * (d - v0 * spec.dt) / (spec.dt * spec.dt)
            accel = a - gravity
        streams.append([ImuSample(float(t), gyro, accel) for t in times])
    return streams


# ---------------------------------------------------------------------------
# scenario text format and on-disk layout


def format_scenario_text(config: ScenarioConfig) -> str:
    lines = ["# sonarloc scenario (key = value, python literals)"]
    for key, value in config.to_mapping().items():
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


def parse_scenario_text(text: str) -> ScenarioConfig:
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"scenario line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        try:
            mapping[key.strip()] = ast.literal_eval(value.strip())
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"scenario line {lineno}: cannot parse value ({exc})")
    return ScenarioConfig.from_mapping(mapping)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_scenario_dir(out_dir, scenario: Scenario, imu_rate_hz: float = 0.0) -> dict:
    """Write the scenario artifacts and return the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = scenario.config

    (out / "scenario.txt").write_text(format_scenario_text(config))
    _write_csv(out / "measurements.csv",
               ["frame", "landmark_id", "bearing_rad", "range_m"],
               [(i, lid, repr(b), repr(r))
                for i, frame in enumerate(scenario.measurements)
                for lid, b, r in frame])
    _write_csv(out / "odometry.csv", ["frame", "dpsi", "dx", "dy"],
               [(i + 1, repr(d[0]), repr(d[1]), repr(d[2]))
                for i, d in enumerate(scenario.odometry)])
    _write_csv(out / "truth_trajectory.csv", ["frame", "psi", "x", "y"],
               [(i, repr(p.yaw), repr(p.x), repr(p.y))
                for i, p in enumerate(scenario.truth.poses)])
    _write_csv(out / "truth_landmarks.csv", ["landmark_id", "x", "y"],
               [(lid, repr(float(p[0])), repr(float(p[1])))
                for lid, p in sorted(scenario.truth.landmarks.items())])

    files = ["scenario.txt", "measurements.csv", "odometry.csv",
             "truth_trajectory.csv", "truth_landmarks.csv"]
    if imu_rate_hz > 0.0:
        from .inertial import save_imu_csv

        streams = imu_stream_for(scenario.truth.intervals, imu_rate_hz)
        rows = []
        for i, stream in enumerate(streams):
            rows.extend(stream if i == 0 else stream[1:])
        save_imu_csv(out / "imu.csv", rows)
        files.append("imu.csv")

    manifest = {
        "kind": "scenario",
        "version": __version__,
        "config": config.to_mapping(),
        "files": sorted(files),
        "n_frames": len(scenario.truth.poses),
        "imu_rate_hz": imu_rate_hz,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def read_scenario_dir(path) -> Scenario:
    """Reload a scenario directory; the noisy streams come from the CSVs."""
    root = Path(path)
    config = parse_scenario_text((root / "scenario.txt").read_text())
    poses, intervals = build_trajectory(config)
    landmarks = {i + 1: np.array(p, dtype=float) for i, p in enumerate(config.landmarks)}

    measurements: list[list[tuple[int, float, float]]] = [[] for _ in poses]
    with open(root / "measurements.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            measurements[int(row[0])].append((int(row[1]), float(row[2]), float(row[3])))
    odometry: list[tuple[float, float, float]] = [None] * (len(poses) - 1)
    with open(root / "odometry.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            odometry[int(row[0]) - 1] = (float(row[1]), float(row[2]), float(row[3]))
    if any(o is None for o in odometry):
        raise ConfigError("odometry.csv is missing increments")

    visible = [visible_landmarks(pose, landmarks, config.intrinsics) for pose in poses]
    truth = GroundTruth(poses=poses, landmarks=landmarks,
                        visible=[[lid for lid, _, _ in v] for v in visible],
                        intervals=intervals)
    return Scenario(config=config, truth=truth, measurements=measurements,
                    odometry=odometry)
