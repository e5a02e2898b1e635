"""Trajectory containers and absolute-pose-error evaluation.

The protocol: downsample both trajectories, associate poses by nearest
timestamp, optionally align the estimate with a rigid SE(2) transform, then
report statistics of the translational part of ``between(ref_i, est_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlignment, NoMatches, TooShort
from .geometry import Pose2, between_batch, compose_batch, wrap_angles

DEFAULT_MAX_DT = 0.02


@dataclass
class Trajectory:
    """Timestamped planar poses. ``xyt`` rows are (x, y, theta)."""

    stamps: np.ndarray
    xyt: np.ndarray

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        self.xyt = np.asarray(self.xyt, dtype=float).reshape(-1, 3)
        if len(self.stamps) != len(self.xyt):
            raise ValueError("stamps and poses differ in length")
        if np.any(np.diff(self.stamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if len(self.xyt):
            self.xyt[:, 2] = wrap_angles(self.xyt[:, 2])

    @classmethod
    def from_poses(cls, stamps, poses) -> Trajectory:
        xyt = np.array([[p.x, p.y, p.theta] for p in poses], dtype=float).reshape(-1, 3)
        return cls(np.asarray(stamps, dtype=float), xyt)

    @classmethod
    def empty(cls) -> Trajectory:
        return cls(np.zeros(0), np.zeros((0, 3)))

    def __len__(self):
        return len(self.stamps)

    def __getitem__(self, i) -> tuple[float, Pose2]:
        return float(self.stamps[i]), Pose2.from_array(self.xyt[i])

    @property
    def poses(self) -> list[Pose2]:
        return [Pose2.from_array(r) for r in self.xyt]

    def subset(self, idx) -> Trajectory:
        idx = np.asarray(idx, dtype=int)
        return Trajectory(self.stamps[idx], self.xyt[idx])

    def transformed(self, g: Pose2) -> Trajectory:
        """Every pose left-multiplied by ``g``."""
        gs = np.tile(g.as_array(), (len(self), 1))
        return Trajectory(self.stamps.copy(), compose_batch(gs, self.xyt) if len(self) else self.xyt)


@dataclass
class ApeResult:
    errors: np.ndarray
    rot_errors: np.ndarray
    rmse: float
    mean: float
    median: float
    max: float
    num_pairs: int

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mean": self.mean, "median": self.median,
                "max": self.max, "num_pairs": self.num_pairs}


@dataclass
class TrajStats:
    duration: float
    total_distance: float
    avg_velocity: float


def associate(ref: Trajectory, est: Trajectory, max_dt: float = DEFAULT_MAX_DT):
    """Greedy nearest-timestamp matching; every pose is used at most once.

    Candidate pairs are taken in order of increasing |dt| and the result is
    sorted by estimate time. Returns a list of (ref_index, est_index).
    """
    if not max_dt > 0:
        raise ValueError("max_dt must be positive")
    if len(ref) == 0 or len(est) == 0:
        raise NoMatches("cannot associate an empty trajectory")
    # Only the neighbors bracketing each estimate stamp can be within max_dt
    # of it before any greedy conflicts, so gather candidates from a window.
    cands = []
    rs = ref.stamps
    for j, t in enumerate(est.stamps):
        lo = np.searchsorted(rs, t - max_dt, side="left")
        hi = np.searchsorted(rs, t + max_dt, side="right")
        for i in range(lo, hi):
            cands.append((abs(rs[i] - t), j, i))
    cands.sort()
    used_r, used_e = set(), set()
    pairs = []
    for dt, j, i in cands:
        if dt > max_dt or i in used_r or j in used_e:
            continue
        used_r.add(i)
        used_e.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no pose pairs within max_dt={max_dt}")
    pairs.sort(key=lambda p: p[1])
    return pairs


def downsample(traj: Trajectory, hz: float) -> Trajectory:
    """Keep the first pose, then every pose at least 1/hz after the last kept one."""
    if not hz > 0:
        raise ValueError("hz must be positive")
    if len(traj) == 0:
        return traj
    period = 1.0 / hz
    keep = [0]
    last = traj.stamps[0]
    for i in range(1, len(traj)):
        # 1e-9 absorbs accumulated rounding in nominally periodic stamps
        if traj.stamps[i] >= last + period - 1e-9:
            keep.append(i)
            last = traj.stamps[i]
    return traj.subset(keep)


def align(ref: Trajectory, est: Trajectory, pairs) -> Pose2:
    """Rigid SE(2) transform G minimizing sum |t_ref - G t_est|^2 (no scale)."""
    if len(pairs) < 2:
        raise DegenerateAlignment("alignment needs at least two pairs")
    ri, ei = np.array(pairs).T
    p = ref.xyt[ri, :2]
    q = est.xyt[ei, :2]
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    dp, dq = p - pc, q - qc
    if np.all(np.abs(dq) < 1e-12):
        raise DegenerateAlignment("all estimated positions coincide")
    s_cross = np.sum(dq[:, 0] * dp[:, 1] - dq[:, 1] * dp[:, 0])
    s_dot = np.sum(dq[:, 0] * dp[:, 0] + dq[:, 1] * dp[:, 1])
    th = math.atan2(s_cross, s_dot)
    c, s = math.cos(th), math.sin(th)
    tx = pc[0] - (c * qc[0] - s * qc[1])
    ty = pc[1] - (s * qc[0] + c * qc[1])
    return Pose2(tx, ty, th)


def ape(ref: Trajectory, est: Trajectory, align_est: bool = True, hz: float | None = 10.0,
        max_dt: float = DEFAULT_MAX_DT) -> ApeResult:
    if hz is not None:
        ref, est = downsample(ref, hz), downsample(est, hz)
    pairs = associate(ref, est, max_dt)
    if align_est:
        est = est.transformed(align(ref, est, pairs))
    ri, ei = np.array(pairs).T
    err = between_batch(ref.xyt[ri], est.xyt[ei])
    trans = np.hypot(err[:, 0], err[:, 1])
    return ApeResult(
        errors=trans,
        rot_errors=np.abs(err[:, 2]),
        rmse=float(np.sqrt(np.mean(trans ** 2))),
        mean=float(np.mean(trans)),
        median=float(np.median(trans)),
        max=float(np.max(trans)),
        num_pairs=len(pairs),
    )


def traj_stats(traj: Trajectory) -> TrajStats:
    if len(traj) < 2:
        raise TooShort("trajectory statistics need at least two poses")
    duration = float(traj.stamps[-1] - traj.stamps[0])
    steps = np.diff(traj.xyt[:, :2], axis=0)
    distance = float(np.sum(np.hypot(steps[:, 0], steps[:, 1])))
    return TrajStats(duration, distance, distance / duration)
