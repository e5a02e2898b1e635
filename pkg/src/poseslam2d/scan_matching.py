"""Laser scan conversion and scan-to-scan registration (ICP and planar GICP).

Registration results map source coordinates into the target frame: if
``pose_t`` and ``pose_s`` are the world poses of the two scans, then the
ideal ``relative_pose`` equals ``between(pose_t, pose_s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoCorrespondences, SingularInformation
from ._kernels import gicp_normal_equations
from .geometry import Pose2

MIN_VALID_RETURNS = 10
MAX_CYCLE = 6


@dataclass
class LaserScan:
    t: float
    angle_min: float
    angle_increment: float
    range_min: float
    range_max: float
    ranges: np.ndarray

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float).ravel()
        if not self.angle_increment > 0:
            raise ValueError(f"angle_increment must be positive, got {self.angle_increment}")
        if not self.range_min < self.range_max:
            raise ValueError("range_min must be smaller than range_max")

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(len(self.ranges))

    def valid_mask(self) -> np.ndarray:
        r = self.ranges
        with np.errstate(invalid="ignore"):
            return np.isfinite(r) & (r >= self.range_min) & (r <= self.range_max)


@dataclass
class PointCloud2:
    points: np.ndarray
    covs: np.ndarray | None = None
    _index: SpatialIndex2 | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.covs is not None:
            self.covs = np.asarray(self.covs, dtype=float).reshape(-1, 2, 2)
            if len(self.covs) != len(self.points):
                raise ValueError("covs and points differ in length")

    def __len__(self):
        return len(self.points)

    @property
    def index(self) -> SpatialIndex2:
        """Lazily built and cached spatial index over the points."""
        if self._index is None:
            self._index = SpatialIndex2(self.points)
        return self._index


class SpatialIndex2:
    """Exact nearest-neighbor index over 2-d points (a k-d tree)."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.points) == 0:
            raise EmptyCloud("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def nearest(self, query) -> tuple[int, float]:
        """Nearest point to ``query``; ties go to the lowest point index."""
        k = min(8, len(self.points))
        dist, idx = self._tree.query(np.asarray(query, dtype=float), k=k)
        dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
        best = dist[0]
        tied = idx[dist <= best]
        return int(tied.min()), float(best)

    def query(self, pts: np.ndarray, max_dist: float = np.inf):
        """Vectorized nearest neighbors. Returns (dist, idx, found_mask)."""
        dist, idx = self._tree.query(pts, k=1, distance_upper_bound=max_dist)
        found = idx < len(self.points)
        return dist, idx, found

    def knn(self, pts: np.ndarray, k: int):
        return self._tree.query(pts, k=k)


@dataclass
class RegistrationConfig:
    max_corr_dist: float = 1.0
    max_iterations: int = 50
    tol: float = 1e-6


@dataclass
class MatchResult:
    relative_pose: Pose2
    iterations: int
    final_cost: float
    converged: bool
    num_correspondences: int


def scan_to_cloud(scan: LaserScan, min_valid: int = MIN_VALID_RETURNS) -> PointCloud2:
    """Cartesian points of the valid returns, in beam order.

    Raises EmptyCloud when fewer than ``min_valid`` returns survive.
    """
    mask = scan.valid_mask()
    r = scan.ranges[mask]
    a = scan.angles[mask]
    if len(r) < min_valid:
        raise EmptyCloud(f"scan at t={scan.t} has {len(r)} valid returns (need {min_valid})")
    return PointCloud2(np.column_stack([r * np.cos(a), r * np.sin(a)]))


def estimate_covariances(cloud: PointCloud2, k: int = 20, eps: float = 1e-3) -> PointCloud2:
    """Per-point regularized covariances from the k nearest neighbors.

    The neighborhood's principal direction is kept and the eigenvalues are
    replaced by (1, eps), so every covariance is a thin ellipse along the
    local surface.
    """
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("cannot estimate covariances of an empty cloud")
    if n < k or k < 3:
        raise EmptyCloud(f"need at least k={k} >= 3 points, cloud has {n}")
    _, nbr = cloud.index.knn(cloud.points, k)
    nb = cloud.points[nbr]  # (n, k, 2)
    d = nb - nb.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", d[..., 0], d[..., 0])
    syy = np.einsum("ij,ij->i", d[..., 1], d[..., 1])
    sxy = np.einsum("ij,ij->i", d[..., 0], d[..., 1])
    phi = 0.5 * np.arctan2(2.0 * sxy, sxx - syy)
    c, s = np.cos(phi), np.sin(phi)
    covs = np.empty((n, 2, 2))
    covs[:, 0, 0] = c * c + eps * s * s
    covs[:, 1, 1] = s * s + eps * c * c
    covs[:, 0, 1] = covs[:, 1, 0] = (1.0 - eps) * c * s
    return PointCloud2(cloud.points, covs, cloud._index)


def _correspond(source, target, R, t, cfg):
    moved = source.points @ R.T + t
    _, idx, found = target.index.query(moved, cfg.max_corr_dist)
    if not found.any():
        raise NoCorrespondences("all correspondences exceed max_corr_dist")
    return moved, idx, found


def _check_clouds(source, target):
    if len(source) < MIN_VALID_RETURNS or len(target) < MIN_VALID_RETURNS:
        raise EmptyCloud("registration needs at least 10 points per cloud")


def _cycle_lag(costs, cost, tol, max_lag=MAX_CYCLE):
    for lag in range(2, min(len(costs), max_lag) + 1):
        if _converged(costs[-lag], cost, tol):
            return lag
    return 0


def _converged(prev, cost, tol):
    return prev is not None and abs(prev - cost) <= tol * max(prev, 1e-300)


def icp_point_to_point(source: PointCloud2, target: PointCloud2, init: Pose2 = Pose2(),
                       cfg: RegistrationConfig | None = None) -> MatchResult:
    """Point-to-point ICP with a closed-form 2-d Procrustes step."""
    cfg = cfg or RegistrationConfig()
    _check_clouds(source, target)
    x, y, th = init.x, init.y, init.theta
    prev = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        R = _rot(th)
        moved, idx, found = _correspond(source, target, R, np.array([x, y]), cfg)
        b = target.points[idx[found]]
        cost = float(np.sum((b - moved[found]) ** 2))
        a = source.points[found]
        ac, bc = a.mean(axis=0), b.mean(axis=0)
        da, db = a - ac, b - bc
        th = math.atan2(np.sum(da[:, 0] * db[:, 1] - da[:, 1] * db[:, 0]),
                        np.sum(da[:, 0] * db[:, 0] + da[:, 1] * db[:, 1]))
        tx, ty = bc - _rot(th) @ ac
        x, y = float(tx), float(ty)
        if _converged(prev, cost, cfg.tol):
            converged = True
            break
        prev = cost
    R = _rot(th)
    moved, idx, found = _correspond(source, target, R, np.array([x, y]), cfg)
    final = float(np.sum((target.points[idx[found]] - moved[found]) ** 2))
    return MatchResult(Pose2(x, y, th), it, final, converged, int(found.sum()))


def _rot(th):
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s], [s, c]])


def _gicp_terms(source, target, R, t, cfg):
    """Correspondences plus per-pair information in the source-rotated frame."""
    moved, idx, found = _correspond(source, target, R, t, cfg)
    j = idx[found]
    a = source.points[found]
    d = target.points[j] - moved[found]
    ca = source.covs[found]
    cb = target.covs[j]
    # Rotate the target covariance and the residual back by R^T so that
    # q = R^T M R = (Ca + R^T Cb R)^-1 can be formed component-wise.
    c, s = R[0, 0], R[1, 0]
    bxx, bxy, byy = cb[:, 0, 0], cb[:, 0, 1], cb[:, 1, 1]
    rxx = c * c * bxx + 2 * c * s * bxy + s * s * byy
    ryy = s * s * bxx - 2 * c * s * bxy + c * c * byy
    rxy = (c * c - s * s) * bxy + c * s * (byy - bxx)
    sxx = ca[:, 0, 0] + rxx
    syy = ca[:, 1, 1] + ryy
    sxy = ca[:, 0, 1] + rxy
    det = sxx * syy - sxy * sxy
    if not np.all(det > 0):
        raise SingularInformation("combined covariance is not invertible")
    qxx, qyy, qxy = syy / det, sxx / det, -sxy / det
    dx = c * d[:, 0] + s * d[:, 1]
    dy = -s * d[:, 0] + c * d[:, 1]
    wx = qxx * dx + qxy * dy
    wy = qxy * dx + qyy * dy
    cost = float(np.sum(dx * wx + dy * wy))
    return a, (qxx, qxy, qyy), (wx, wy), cost, int(found.sum())


def _gicp_system(source, target, pose, cfg, H, g):
    """Fill the 3x3 Gauss-Newton system in place; returns (cost, pairs)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    moved = source.points @ np.array([[c, s], [-s, c]]) + np.array([pose.x, pose.y])
    _, idx, found = target.index.query(moved, cfg.max_corr_dist)
    if not found.any():
        raise NoCorrespondences("all correspondences exceed max_corr_dist")
    cost, n, singular = gicp_normal_equations(
        source.points, source.covs, target.points, target.covs, idx, found, c, s, pose.x, pose.y, H, g)
    if singular:
        raise SingularInformation("combined covariance is not invertible")
    return cost, n


def gicp_cost(source, target, pose: Pose2, cfg: RegistrationConfig | None = None) -> float:
    cfg = cfg or RegistrationConfig()
    return _gicp_terms(source, target, pose.rotation(), np.array([pose.x, pose.y]), cfg)[3]


def gicp_align(source: PointCloud2, target: PointCloud2, init: Pose2 = Pose2(),
               cfg: RegistrationConfig | None = None) -> MatchResult:
    """Distribution-to-distribution registration by Gauss-Newton on SE(2).

    Minimizes sum_i d_i^T (Cb_i + R Ca_i R^T)^-1 d_i with d_i = b_i - T a_i.
    Both clouds must carry covariances (see :func:`estimate_covariances`).
    """
    cfg = cfg or RegistrationConfig()
    if source.covs is None or target.covs is None:
        raise ValueError("gicp_align requires covariances on both clouds")
    _check_clouds(source, target)
    pose = init
    costs, poses = [], []
    converged = False
    it = 0
    H, g = np.zeros((3, 3)), np.zeros(3)
    for it in range(1, cfg.max_iterations + 1):
        cost = _gicp_system(source, target, pose, cfg, H, g)[0]
        lag = _cycle_lag(costs, cost, cfg.tol)
        if lag:
            # Correspondences keep flipping and the iterates revisit a
            # previous state; settle on the cheapest member of the cycle.
            members = list(zip(costs[-lag + 1:], poses[-lag + 1:])) + [(cost, pose)]
            pose = min(members, key=lambda m: m[0])[1]
            converged = True
            break
        costs.append(cost)
        poses.append(pose)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation("registration normal equations are singular") from exc
        pose = pose.retract(delta)
        if len(costs) >= 2 and _converged(costs[-2], cost, cfg.tol):
            converged = True
            break
    final, ncorr = _gicp_system(source, target, pose, cfg, H, g)
    return MatchResult(pose, it, final, converged, ncorr)
