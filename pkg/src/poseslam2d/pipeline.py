"""Sliding-window lidar PoseSLAM.

Every accepted scan becomes a pose variable. The new pose is registered
against each of the last ``window`` scans with GICP, and each registration
becomes a between factor, so the poses inside the window are fully connected.
The whole graph is then re-optimized from the previous estimate.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import (
    BadConfig,
    DegenerateScan,
    EmptyCloud,
    MatchFailure,
    NoCorrespondences,
    SingularInformation,
)
from .evaluation import Trajectory
from .factor_graph import (
    BetweenFactor,
    FactorGraph,
    LMConfig,
    NoiseModel,
    PriorFactor,
    Values,
    optimize,
)
from .geometry import Pose2, between
from .scan_matching import (
    LaserScan,
    PointCloud2,
    RegistrationConfig,
    estimate_covariances,
    gicp_align,
    scan_to_cloud,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    window: int = 8
    sigma_xy: float = 0.05
    sigma_theta: float = 0.02
    prior_sigma: float = 1e-3
    cov_neighbors: int = 20
    cov_epsilon: float = 1e-3
    max_corr_dist: float = 1.0
    max_iterations: int = 50
    tol: float = 1e-6
    keyframe_min_translation: float = 0.0
    keyframe_min_rotation: float = 0.0
    workers: int = 1
    publish_past_every: int = 0
    lm: LMConfig = field(default_factory=LMConfig)

    def validate(self):
        if not isinstance(self.window, int) or self.window < 1:
            raise BadConfig(f"window must be a positive integer, got {self.window!r}")
        for name in ("sigma_xy", "sigma_theta", "prior_sigma", "max_corr_dist", "tol"):
            if not getattr(self, name) > 0:
                raise BadConfig(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.cov_neighbors < 3:
            raise BadConfig("cov_neighbors must be at least 3")
        if not 0 < self.cov_epsilon <= 1:
            raise BadConfig("cov_epsilon must lie in (0, 1]")
        if self.keyframe_min_translation < 0 or self.keyframe_min_rotation < 0:
            raise BadConfig("keyframe thresholds must be non-negative")
        if self.publish_past_every < 0:
            raise BadConfig("publish_past_every must be non-negative")
        if self.workers < 1 or self.max_iterations < 1:
            raise BadConfig("workers and max_iterations must be at least 1")
        return self

    @property
    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(self.max_corr_dist, self.max_iterations, self.tol)

    @property
    def keyframing(self) -> bool:
        return self.keyframe_min_translation > 0 or self.keyframe_min_rotation > 0


@dataclass
class PoseEstimate:
    t: float
    pose: Pose2
    var: int


@dataclass
class SlamState:
    graph: FactorGraph = field(default_factory=FactorGraph)
    values: Values = field(default_factory=Values)
    window_scans: list[tuple[int, PointCloud2]] = field(default_factory=list)
    next_id: int = 0
    last_motion: Pose2 = field(default_factory=Pose2)
    stamps: dict[int, float] = field(default_factory=dict)
    last_t: float | None = None


@dataclass
class Timing:
    """Wall-clock seconds per accepted scan."""

    total: list[float] = field(default_factory=list)
    optimizer: list[float] = field(default_factory=list)


class SlamPipeline:
    """One pipeline instance, driven by a single caller.

    ``on_estimate`` is called with every emitted :class:`PoseEstimate`. When
    ``cfg.publish_past_every`` is N > 0, ``on_trajectory`` also receives the
    full re-optimized trajectory after every N accepted scans.
    """

    def __init__(self, cfg: PipelineConfig | None = None, on_estimate=None, on_trajectory=None):
        self.cfg = (cfg or PipelineConfig()).validate()
        self.state = SlamState()
        self.timing = Timing()
        self.on_estimate = on_estimate
        self.on_trajectory = on_trajectory
        c = self.cfg
        self._between_noise = NoiseModel.from_sigmas([c.sigma_xy, c.sigma_xy, c.sigma_theta])
        self._prior_noise = NoiseModel.isotropic(c.prior_sigma)
        self._pool = ThreadPoolExecutor(c.workers) if c.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _cloud(self, scan: LaserScan) -> PointCloud2:
        if len(scan.ranges) < 2:
            raise DegenerateScan(f"scan at t={scan.t} has fewer than 2 ranges")
        try:
            cloud = scan_to_cloud(scan)
            return estimate_covariances(cloud, min(self.cfg.cov_neighbors, len(cloud)),
                                        self.cfg.cov_epsilon)
        except EmptyCloud as exc:
            raise DegenerateScan(str(exc)) from exc

    def _align(self, source, target, init):
        try:
            return gicp_align(source, target, init, self.cfg.registration)
        except (NoCorrespondences, SingularInformation, EmptyCloud) as exc:
            return exc

    def process_scan(self, scan: LaserScan) -> PoseEstimate | None:
        """Add one scan. Returns the new pose estimate, or None if the scan
        was skipped by keyframing.

        Raises DegenerateScan or MatchFailure, leaving the state untouched.
        """
        st = self.state
        if st.last_t is not None and not scan.t > st.last_t:
            raise ValueError(f"scan time {scan.t} does not advance past {st.last_t}")
        t0 = time.perf_counter()
        cloud = self._cloud(scan)
        var = st.next_id

        if not st.window_scans:
            st.graph.add(PriorFactor(var, Pose2(), self._prior_noise))
            st.values[var] = Pose2()
            t1 = time.perf_counter()
            st.values, _ = optimize(st.graph, st.values, self.cfg.lm)
            return self._accept(scan, var, cloud, t0, t1, time.perf_counter())

        prev_id, prev_cloud = st.window_scans[-1]
        predicted = st.values[prev_id].compose(st.last_motion)

        consecutive = self._align(cloud, prev_cloud, st.last_motion)
        if isinstance(consecutive, Exception):
            raise MatchFailure(f"scan at t={scan.t}: consecutive match failed: {consecutive}")
        if self.cfg.keyframing:
            m = consecutive.relative_pose
            if (m.translation_norm() < self.cfg.keyframe_min_translation
                    and abs(m.theta) < self.cfg.keyframe_min_rotation):
                return None

        skips = st.window_scans[:-1]
        inits = [between(st.values[vid], predicted) for vid, _ in skips]
        jobs = [(cloud, c, init) for (_, c), init in zip(skips, inits)]
        if self._pool is not None and jobs:
            results = list(self._pool.map(lambda j: self._align(*j), jobs))
        else:
            results = [self._align(*j) for j in jobs]

        factors = []
        for (vid, _), res in zip(skips, results):
            if isinstance(res, Exception):
                log.debug("dropping skip factor %d-%d: %s", vid, var, res)
                continue
            factors.append(BetweenFactor(vid, var, res.relative_pose, self._between_noise))
        factors.append(BetweenFactor(prev_id, var, consecutive.relative_pose, self._between_noise))

        for f in factors:
            st.graph.add(f)
        st.values[var] = predicted
        t1 = time.perf_counter()
        st.values, _ = optimize(st.graph, st.values, self.cfg.lm)
        t2 = time.perf_counter()
        st.last_motion = between(st.values[prev_id], st.values[var])
        return self._accept(scan, var, cloud, t0, t1, t2)

    def _accept(self, scan, var, cloud, t0, t1, t2):
        st = self.state
        st.window_scans.append((var, cloud))
        del st.window_scans[: max(0, len(st.window_scans) - self.cfg.window)]
        st.next_id = var + 1
        st.stamps[var] = scan.t
        st.last_t = scan.t
        est = PoseEstimate(scan.t, st.values[var], var)
        self.timing.optimizer.append(t2 - t1)
        self.timing.total.append(time.perf_counter() - t0)
        if self.on_estimate is not None:
            self.on_estimate(est)
        n = self.cfg.publish_past_every
        if n and self.on_trajectory is not None and len(st.stamps) % n == 0:
            self.on_trajectory(self.trajectory())
        return est

    def trajectory(self) -> Trajectory:
        """Current optimized values of every pose, in time order."""
        st = self.state
        ids = sorted(st.stamps, key=st.stamps.get)
        return Trajectory.from_poses([st.stamps[i] for i in ids], [st.values[i] for i in ids])


def run_offline(cfg: PipelineConfig | None, scans, on_estimate=None, pipeline_out=None) -> Trajectory:
    """Process a whole scan log and return the final optimized trajectory.

    Degenerate scans and failed consecutive matches are logged and skipped.
    ``pipeline_out``, if a list, receives the pipeline (for timing inspection).
    """
    with SlamPipeline(cfg, on_estimate) as slam:
        if pipeline_out is not None:
            pipeline_out.append(slam)
        for scan in scans:
            try:
                slam.process_scan(scan)
            except (DegenerateScan, MatchFailure) as exc:
                log.warning("skipping scan: %s", exc)
        return slam.trajectory()


def factor_count(n: int, window: int) -> int:
    """Factors in a graph over n scans when no match fails."""
    if n == 0:
        return 0
    return 1 + sum(min(i, window) for i in range(1, n))

