"""Method execution over a scenario: proposed / two-view baseline / dead
reckoning, plus the on-disk result layout consumed by evaluate and report."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .degeneracy import DegeneracyThresholds
from .errors import ConfigError
from .estimation import OdometryMeasurement, SolverConfig
from .geometry import MODE_2D, Pose
from .metrics import RunResult, endpoint_error, landmark_errors, trajectory_rmse
from .sim import Scenario, read_scenario_dir
from .window import Pipeline, PipelineConfig, baseline_config, dead_reckoning

METHODS = ("proposed", "aba2view", "dr")

NOISE_FLOOR = {  # estimator-side sigmas used when a scenario declares zero noise
    "sonar_bearing": 0.02,
    "sonar_range": 0.05,
    "odom_rot": 0.02,
    "odom_trans": 0.05,
}


@dataclass
class RunConfig:
    """Resolved knobs for one run: thresholds, window shape, solver, output."""

    method: str = "proposed"
    sigma_low: float = 0.13
    sigma_high: float = 0.8
    min_features: int = 2
    coview_min: int = 4
    window_max: int = 5
    skf_capacity: int = 200
    solver: str = "gn"
    max_iterations: int = 50
    tolerance: float = 1e-8
    seed: int = 0

    def to_mapping(self) -> dict:
        return {
            "method": self.method,
            "thresholds.sigma_low": self.sigma_low,
            "thresholds.sigma_high": self.sigma_high,
            "thresholds.min_features": self.min_features,
            "window.coview_min": self.coview_min,
            "window.max_size": self.window_max,
            "window.skf_capacity": self.skf_capacity,
            "solver.method": self.solver,
            "solver.max_iterations": self.max_iterations,
            "solver.tolerance": self.tolerance,
            "seed": self.seed,
        }

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        base = cls()
        return cls(
            method=str(mapping.get("method", base.method)),
            sigma_low=float(mapping.get("thresholds.sigma_low", base.sigma_low)),
            sigma_high=float(mapping.get("thresholds.sigma_high", base.sigma_high)),
            min_features=int(mapping.get("thresholds.min_features", base.min_features)),
            coview_min=int(mapping.get("window.coview_min", base.coview_min)),
            window_max=int(mapping.get("window.max_size", base.window_max)),
            skf_capacity=int(mapping.get("window.skf_capacity", base.skf_capacity)),
            solver=str(mapping.get("solver.method", base.solver)),
            max_iterations=int(mapping.get("solver.max_iterations", base.max_iterations)),
            tolerance=float(mapping.get("solver.tolerance", base.tolerance)),
            seed=int(mapping.get("seed", base.seed)),
        )


def pipeline_config(scenario: Scenario, run: RunConfig) -> PipelineConfig:
    cfg = scenario.config
    sonar_sigma = (cfg.sonar_bearing_sigma or NOISE_FLOOR["sonar_bearing"],
                   cfg.sonar_range_sigma or NOISE_FLOOR["sonar_range"])
    odom_sigma = (cfg.odom_rot_sigma or NOISE_FLOOR["odom_rot"],
                  cfg.odom_trans_sigma or NOISE_FLOOR["odom_trans"])
    return PipelineConfig(
        mode=MODE_2D,
        thresholds=DegeneracyThresholds(sigma_low=run.sigma_low,
                                        sigma_high=run.sigma_high,
                                        min_features=run.min_features),
        window_max=run.window_max,
        coview_min=run.coview_min,
        skf_capacity=run.skf_capacity,
        solver_method=run.solver,
        solver=SolverConfig(max_iterations=run.max_iterations, tolerance=run.tolerance),
        sonar_sigma=sonar_sigma,
        odom_sigma=odom_sigma,
    )


def odometry_measurements(scenario: Scenario, config: PipelineConfig):
    cov = config.odom_cov()
    return [OdometryMeasurement(Pose.planar(d[0], d[1], d[2]), cov)
            for d in scenario.odometry]


def run_method(scenario: Scenario, method: str, run: RunConfig) -> tuple[RunResult, list[dict]]:
    """Execute one method over the scenario's measurement/odometry stream."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    config = pipeline_config(scenario, run)
    odometry = odometry_measurements(scenario, config)
    frame_dt = scenario.config.frame_dt_s

    if method == "dr":
        import time

        records = []
        poses = [Pose.identity(MODE_2D)]
        timings = [0.0]
        for i, odo in enumerate(odometry):
            t0 = time.perf_counter()
            poses.append(poses[-1].compose(odo.relative))
            timings.append((time.perf_counter() - t0) * 1e3)
            records.append({"frame": i + 1, "pose": [poses[-1].yaw, poses[-1].x, poses[-1].y],
                            "classification": "dead_reckoning", "timing_ms": timings[-1]})
        result = RunResult(method=method, trajectory=poses, landmarks={},
                           timings_ms=timings)
        return result, records

    if method == "aba2view":
        config = replace(config, window_max=2,
                         thresholds=DegeneracyThresholds(
                             sigma_low=0.0, sigma_high=config.thresholds.sigma_high,
                             min_features=0))
    pipe = Pipeline(config)
    for i, frame in enumerate(scenario.measurements):
        pipe.process_frame(i, frame, timestamp=i * frame_dt,
                           odometry=odometry[i - 1] if i > 0 else None)
    result = RunResult(
        method=method,
        trajectory=list(pipe.trajectory),
        landmarks={lid: np.array([p[0], p[1]]) for lid, p in pipe.landmarks.items()},
        timings_ms=[rec["timing_ms"] for rec in pipe.records],
    )
    return result, pipe.records


# ---------------------------------------------------------------------------
# on-disk layout


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def evaluate_result(result: RunResult, scenario: Scenario) -> dict:
    """Metric block shared by the run and evaluate commands."""
    traj = trajectory_rmse(result, scenario.truth.poses)
    summary = {
        "method": result.method,
        "trajectory": traj.summary(),
        "endpoint_error_m": endpoint_error(result, scenario.truth.poses),
        "timing_ms_mean": float(np.mean(result.timings_ms)) if result.timings_ms else 0.0,
    }
    if result.landmarks:
        lm = landmark_errors(result, scenario.truth.landmarks)
        summary["landmarks"] = {k: lm[k] for k in ("rmse_x", "rmse_y", "mae_x", "mae_y")}
    else:
        summary["landmarks"] = None
    return summary


def write_run_dir(out_dir, scenario_dir, scenario: Scenario, result: RunResult,
                  records: list[dict], run: RunConfig) -> dict:
    """Persist one method's trajectory, landmarks, records, metrics and manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "trajectory.csv", ["frame", "psi", "x", "y"],
               [(i, repr(p.yaw), repr(p.x), repr(p.y))
                for i, p in enumerate(result.trajectory)])
    _write_csv(out / "landmarks.csv", ["landmark_id", "x", "y"],
               [(lid, repr(float(p[0])), repr(float(p[1])))
                for lid, p in sorted(result.landmarks.items())])
    with open(out / "records.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    traj = trajectory_rmse(result, scenario.truth.poses)
    _write_csv(out / "errors.csv", ["frame", "err_m", "cum_rmse_m"],
               [(i, repr(float(e)), repr(float(c)))
                for i, (e, c) in enumerate(zip(traj.per_frame, traj.cumulative_rmse))])
    if result.landmarks:
        lm = landmark_errors(result, scenario.truth.landmarks)
        _write_csv(out / "landmark_errors.csv", ["landmark_id", "ex_m", "ey_m"],
                   [(lid, repr(float(d[0])), repr(float(d[1])))
                    for lid, d in zip(lm["ids"], lm["per_landmark"])])
    summary = evaluate_result(result, scenario)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")

    manifest = {
        "kind": "run",
        "version": __version__,
        "method": result.method,
        "scenario_dir": str(scenario_dir),
        "config": run.to_mapping(),
        "n_frames": len(result.trajectory),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def read_run_dir(path) -> dict:
    """Reload a run directory into plain arrays for evaluate/report."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    trajectory = []
    with open(root / "trajectory.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            trajectory.append(Pose.planar(float(row[1]), float(row[2]), float(row[3])))
    landmarks = {}
    lm_path = root / "landmarks.csv"
    if lm_path.exists():
        with open(lm_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                landmarks[int(row[0])] = np.array([float(row[1]), float(row[2])])
    timings = []
    rec_path = root / "records.jsonl"
    if rec_path.exists():
        with open(rec_path) as fh:
            for line in fh:
                rec = json.loads(line)
                timings.append(float(rec.get("timing_ms", 0.0)))
    result = RunResult(method=manifest["method"], trajectory=trajectory,
                       landmarks=landmarks, timings_ms=timings)
    return {"manifest": manifest, "result": result, "path": root}


def load_scenario_for_run(run_info: dict, scenario_dir=None) -> Scenario:
    path = Path(scenario_dir) if scenario_dir else Path(run_info["manifest"]["scenario_dir"])
    if not path.exists():
        raise ConfigError(f"scenario directory {path} not found")
    return read_scenario_dir(path)
