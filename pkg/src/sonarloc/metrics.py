"""Error metrics: per-frame trajectory errors, landmark RMSE/MAE, endpoint error."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Pose


@dataclass
class RunResult:
    """One method's output over a scenario."""

    method: str
    trajectory: list[Pose]
    landmarks: dict[int, np.ndarray]
    timings_ms: list[float] = field(default_factory=list)

    def __post_init__(self):
        if any(t < 0 for t in self.timings_ms):
            raise ConfigError("timings must be non-negative")


@dataclass(frozen=True)
class TrajectoryErrors:
    per_frame: np.ndarray        # Euclidean position error per frame
    cumulative_rmse: np.ndarray  # sqrt(mean of squared errors up to each frame)

    @property
    def final_rmse(self) -> float:
        return float(self.cumulative_rmse[-1])

    def summary(self) -> dict:
        e = self.per_frame
        return {
            "mean": float(np.mean(e)),
            "std": float(np.std(e)),
            "min": float(np.min(e)),
            "max": float(np.max(e)),
            "final_rmse": self.final_rmse,
        }


def trajectory_rmse(result: RunResult, truth: list[Pose]) -> TrajectoryErrors:
    """Per-frame position error series and the running RMSE, no alignment.

    The gauge is pinned at the first pose, so raw world-frame errors are the
    quantity of interest; aligning trajectories first would mask drift.
    """
    if len(result.trajectory) != len(truth):
        raise ConfigError(
            f"trajectory length {len(result.trajectory)} != truth length {len(truth)}")
    err = np.array([
        math.hypot(est.x - ref.x, est.y - ref.y)
        for est, ref in zip(result.trajectory, truth)
    ])
    cum = np.sqrt(np.cumsum(err ** 2) / np.arange(1, err.size + 1))
    return TrajectoryErrors(per_frame=err, cumulative_rmse=cum)


def landmark_errors(result: RunResult, truth: dict[int, np.ndarray]) -> dict:
    """Per-axis RMSE and MAE over landmarks estimated at least once."""
    ids = sorted(set(result.landmarks) & set(truth))
    if not ids:
        raise ConfigError("no estimated landmarks to evaluate")
    diffs = np.array([
        [result.landmarks[i][0] - truth[i][0], result.landmarks[i][1] - truth[i][1]]
        for i in ids
    ])
    return {
        "ids": ids,
        "per_landmark": diffs,
        "rmse_x": float(np.sqrt(np.mean(diffs[:, 0] ** 2))),
        "rmse_y": float(np.sqrt(np.mean(diffs[:, 1] ** 2))),
        "mae_x": float(np.mean(np.abs(diffs[:, 0]))),
        "mae_y": float(np.mean(np.abs(diffs[:, 1]))),
    }


def endpoint_error(result: RunResult, truth: list[Pose]) -> float:
    """Euclidean distance between the final estimated and true positions."""
    if not result.trajectory or not truth:
        raise ConfigError("cannot compute the endpoint error of an empty trajectory")
    est, ref = result.trajectory[-1], truth[-1]
    return math.hypot(est.x - ref.x, est.y - ref.y)
