"""SKF database, elastic sliding-window admission, and the per-frame pipeline.

Every incoming sonar frame is paired with its predecessor into a two-view
problem whose whitened sonar Jacobian is classified by feature count and
minimum singular value. Under-constrained frames fall back to inertial
dead reckoning and never contribute factors. Well-constrained frames pull
qualifying sonar keyframes (SKFs) from the database into an elastic window
(size 2..max), are optimized jointly, and are stored as SKFs themselves
when their singular value clears the keyframe bar.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .degeneracy import Classification, DegeneracyThresholds, classify_frame, singular_spectrum
from .errors import AssemblyError, DivergenceError, SingularSystemError, SonarlocError
from .estimation import (
    FactorGraph,
    OdometryMeasurement,
    SolverConfig,
    SonarMeasurement,
    assemble,
    compose_odometry,
    predict,
    solve,
)
from .geometry import MODE_2D, PolarLandmark, Pose, back_project, project

logger = logging.getLogger(__name__)

Observation = tuple[int, float, float]  # (landmark id, bearing, range)


@dataclass(frozen=True)
class FrameRecord:
    """Per-frame bookkeeping: observations, saliency and the committed pose."""

    frame_id: int
    timestamp: float
    observations: tuple[Observation, ...]
    sigma_min: float | None
    classification: Classification | None
    pose: Pose

    @property
    def feature_ids(self) -> frozenset[int]:
        return frozenset(o[0] for o in self.observations)


def coview_count(candidate: FrameRecord, current: FrameRecord) -> int:
    """Number of feature ids the two frames share."""
    return len(candidate.feature_ids & current.feature_ids)


@dataclass
class ElasticWindow:
    """Ordered frame set for one optimization, always holding the current pair."""

    members: list[FrameRecord]
    max_size: int = 5
    min_coview: int = 4

    def __post_init__(self):
        if self.max_size < 2:
            raise SonarlocError("window max size must be at least 2")

    @property
    def frame_ids(self) -> list[int]:
        return [m.frame_id for m in self.members]


def admit_keyframes(db, current: FrameRecord, window: ElasticWindow) -> ElasticWindow:
    """Fill the window with qualifying SKFs from the database.

    A candidate must share at least ``min_coview`` feature ids with the
    current frame and carry a minimum singular value no smaller than the
    average over the current window members. Qualifiers are ranked by
    sigma_min descending (ties break toward the newer frame) and trimmed to
    the top ``max_size - 2`` so the pair always fits.
    """
    member_ids = set(window.frame_ids)
    sigmas = [m.sigma_min for m in window.members if m.sigma_min is not None]
    sigma_aver = float(np.mean(sigmas)) if sigmas else 0.0

    qualified = [
        rec for rec in db
        if rec.frame_id not in member_ids
        and coview_count(rec, current) >= window.min_coview
        and rec.sigma_min is not None
        and rec.sigma_min >= sigma_aver
    ]
    qualified.sort(key=lambda r: (-r.sigma_min, -r.frame_id))
    admitted = qualified[: window.max_size - 2]
    members = sorted(window.members + admitted, key=lambda r: r.frame_id)
    return ElasticWindow(members=members, max_size=window.max_size,
                         min_coview=window.min_coview)


@dataclass
class PipelineConfig:
    """Knobs of the per-frame pipeline (thresholds, window shape, noise model)."""

    mode: str = MODE_2D
    thresholds: DegeneracyThresholds = field(default_factory=DegeneracyThresholds)
    window_max: int = 5          # largest window size including the current pair
    coview_min: int = 4          # shared-feature bar for SKF admission
    skf_capacity: int = 200      # FIFO bound on the SKF database
    solver_method: str = "gn"
    solver: SolverConfig = field(default_factory=SolverConfig)
    sonar_sigma: tuple[float, float] = (0.02, 0.05)   # bearing rad, range m
    odom_sigma: tuple[float, float] = (0.02, 0.05)    # rotation rad, translation m

    def sonar_cov(self) -> np.ndarray:
        return np.diag([self.sonar_sigma[0] ** 2, self.sonar_sigma[1] ** 2])

    def odom_cov(self) -> np.ndarray:
        r, t = self.odom_sigma
        return np.diag([r * r, t * t, t * t])


def baseline_config(config: PipelineConfig) -> PipelineConfig:
    """Plain two-view configuration: window pinned to the pair, rejection off."""
    return replace(
        config,
        window_max=2,
        thresholds=DegeneracyThresholds(sigma_low=0.0,
                                        sigma_high=config.thresholds.sigma_high,
                                        min_features=0),
    )


class Pipeline:
    """Frame-by-frame state estimator over a sonar/odometry stream."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.db: deque[FrameRecord] = deque(maxlen=config.skf_capacity)
        self.previous: FrameRecord | None = None
        self.trajectory: list[Pose] = []
        self.landmarks: dict[int, np.ndarray] = {}
        self.records: list[dict] = []
        self.last_graph: FactorGraph | None = None
        self._odometry_log: dict[int, OdometryMeasurement] = {}  # to-frame id -> step

    def _composed_odometry(self, from_id: int, to_id: int) -> OdometryMeasurement:
        """Relative-pose measurement between two frames, chained through the
        per-frame increments received so far."""
        total = self._odometry_log[from_id + 1]
        for fid in range(from_id + 2, to_id + 1):
            total = compose_odometry(total, self._odometry_log[fid])
        return total

    # -- helpers ----------------------------------------------------------

    def _paired_factors(self, current_obs, odometry):
        """Two-view pairing against the previous frame by feature id."""
        prev = self.previous
        anchors: dict[int, Observation] = {}
        for obs in prev.observations:
            anchors.setdefault(obs[0], obs)
        paired = [obs for obs in current_obs if obs[0] in anchors]
        n_features = len({obs[0] for obs in paired})
        return anchors, paired, n_features

    def _two_view_sigma(self, anchors, paired, predicted_pose) -> float:
        """Minimum singular value of the whitened sonar-only two-view system."""
        if not paired:
            return 0.0
        prev = self.previous
        graph = FactorGraph(self.config.mode)
        graph.add_pose(prev.frame_id, prev.pose, fixed=True)
        graph.add_pose(prev.frame_id + 1, predicted_pose)
        cov = self.config.sonar_cov()
        used = sorted({obs[0] for obs in paired})
        for lid in used:
            a = anchors[lid]
            graph.add_landmark(lid, PolarLandmark(a[1], a[2], anchor_id=prev.frame_id))
            graph.add_sonar_factor(SonarMeasurement(a[1], a[2], cov, prev.frame_id, lid))
        for lid, b, r in paired:
            graph.add_sonar_factor(SonarMeasurement(b, r, cov, prev.frame_id + 1, lid))
        system = assemble(graph, include_odometry=False)
        return float(singular_spectrum(system.a)[-1])

    def _window_landmarks(self, window: ElasticWindow) -> dict[int, int]:
        """Ids observed by at least two window members, mapped to the oldest
        member observing them (the init source)."""
        seen: dict[int, list[int]] = {}
        for idx, member in enumerate(window.members):
            for lid in member.feature_ids:
                seen.setdefault(lid, []).append(idx)
        return {lid: idxs[0] for lid, idxs in seen.items() if len(set(idxs)) >= 2}

    def _build_window_graph(self, window: ElasticWindow) -> FactorGraph:
        members = window.members
        anchor = members[0]
        graph = FactorGraph(self.config.mode)
        for i, member in enumerate(members):
            graph.add_pose(member.frame_id, member.pose, fixed=(i == 0))
        included = self._window_landmarks(window)
        cov = self.config.sonar_cov()
        for lid in sorted(included):
            source = members[included[lid]]
            obs = next(o for o in source.observations if o[0] == lid)
            if source.frame_id == anchor.frame_id:
                lm = PolarLandmark(obs[1], obs[2], anchor_id=anchor.frame_id)
            else:
                world = source.pose.transform_from(
                    back_project(PolarLandmark(obs[1], obs[2])))
                b, r = project(anchor.pose.transform_into(world))
                lm = PolarLandmark(b, r, anchor_id=anchor.frame_id)
            graph.add_landmark(lid, lm)
        for member in members:
            for lid, b, r in member.observations:
                if lid in included:
                    graph.add_sonar_factor(
                        SonarMeasurement(b, r, cov, member.frame_id, lid))
        for earlier, later in zip(members[:-1], members[1:]):
            graph.add_odometry_factor(
                earlier.frame_id, later.frame_id,
                self._composed_odometry(earlier.frame_id, later.frame_id))
        return graph

    def _commit(self, record: FrameRecord, report: dict) -> None:
        self.previous = record
        self.trajectory.append(record.pose)
        self.records.append(report)

    # -- main entry point ---------------------------------------------------

    def process_frame(self, frame_id: int, observations, timestamp: float | None = None,
                      odometry: OdometryMeasurement | None = None) -> dict:
        """Advance the pipeline by one sonar frame.

        ``observations`` is the frame's list of (landmark id, bearing, range)
        returns; ``odometry`` carries the pre-integrated relative pose from
        the previous frame (required after the first frame). Returns the
        per-frame report that also lands in ``records``.
        """
        start = time.perf_counter()
        observations = tuple(tuple(o) for o in observations)
        timestamp = float(frame_id) if timestamp is None else timestamp

        if self.previous is None:
            record = FrameRecord(frame_id, timestamp, observations, None, None,
                                 Pose.identity(self.config.mode))
            report = self._report(record, 0, [], None, False, start)
            self._commit(record, report)
            return report

        if odometry is None:
            raise SonarlocError("odometry increment required after the first frame")

        self._odometry_log[frame_id] = odometry
        predicted = self.previous.pose.compose(odometry.relative)
        anchors, paired, n_features = self._paired_factors(observations, odometry)
        sigma_min = self._two_view_sigma(anchors, paired, predicted)
        label = classify_frame(n_features, sigma_min, self.config.thresholds)

        if label is Classification.UNDER_CONSTRAINED:
            # enough features but a collapsed sigma points at a front-end
            # failure: quarantine the observations so the next frame does not
            # anchor against corrupted associations
            suspected_outlier = n_features >= self.config.thresholds.min_features
            kept = () if suspected_outlier else observations
            record = FrameRecord(frame_id, timestamp, kept, sigma_min, label, predicted)
            report = self._report(record, n_features, [], None, True, start)
            self._commit(record, report)
            return report

        candidate = FrameRecord(frame_id, timestamp, observations, sigma_min,
                                label, predicted)
        window = ElasticWindow(members=[self.previous, candidate],
                               max_size=self.config.window_max,
                               min_coview=self.config.coview_min)
        window = admit_keyframes(list(self.db), candidate, window)

        fallback = False
        solver_report = None
        pose = predicted
        try:
            graph = self._build_window_graph(window)
            solver_report = solve(graph, self.config.solver_method, self.config.solver)
            pose = graph.poses[frame_id]
            anchor = window.members[0]
            for lid, lm in graph.landmarks.items():
                self.landmarks[lid] = anchor.pose.transform_from(back_project(lm))
            self.last_graph = graph
        except (AssemblyError, SingularSystemError, DivergenceError) as exc:
            logger.warning("frame %d: solver failed (%s); falling back to inertial update",
                           frame_id, exc)
            fallback = True
            pose = predicted

        record = FrameRecord(frame_id, timestamp, observations, sigma_min, label, pose)
        if label is Classification.KEYFRAME and not fallback:
            self.db.append(record)
        report = self._report(record, n_features, window.frame_ids, solver_report,
                              fallback, start)
        self._commit(record, report)
        return report

    def _report(self, record: FrameRecord, n_features: int, window_ids,
                solver_report, inertial_only: bool, start: float) -> dict:
        elapsed_ms = (time.perf_counter() - start) * 1e3
        return {
            "frame": record.frame_id,
            "timestamp": record.timestamp,
            "n_features": n_features,
            "sigma_min": record.sigma_min,
            "classification": record.classification.value if record.classification else "reference",
            "window": list(window_ids),
            "pose": [record.pose.yaw, record.pose.x, record.pose.y],
            "inertial_only": inertial_only,
            "iterations": solver_report.iterations if solver_report else 0,
            "final_cost": solver_report.final_cost if solver_report else None,
            "timing_ms": elapsed_ms,
        }


def dead_reckoning(odometry_stream, mode: str = MODE_2D) -> list[Pose]:
    """Pure inertial propagation: compose the relative increments from identity."""
    poses = [Pose.identity(mode)]
    for odo in odometry_stream:
        poses.append(poses[-1].compose(odo.relative))
    return poses
