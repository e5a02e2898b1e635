"""Synthetic 2-d lidar datasets: line-segment worlds, ray casting and waypoint motion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadWaypoints
from .evaluation import Trajectory
from .geometry import Pose2, wrap_angle
from .scan_matching import LaserScan


@dataclass
class World2D:
    segments: np.ndarray  # (M, 2, 2): [[x1, y1], [x2, y2]]

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2, 2)
        lengths = np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)
        if np.any(lengths <= 0):
            raise ValueError("world contains a zero-length segment")

    def bounds(self):
        pts = self.segments.reshape(-1, 2)
        return pts.min(axis=0), pts.max(axis=0)

    def distance_to(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the nearest segment."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        p, q = self.segments[:, 0], self.segments[:, 1]
        e = q - p
        rel = pts[:, None, :] - p[None]
        u = np.clip(np.einsum("nmk,mk->nm", rel, e) / np.einsum("mk,mk->m", e, e), 0.0, 1.0)
        closest = p[None] + u[..., None] * e[None]
        return np.linalg.norm(pts[:, None, :] - closest, axis=2).min(axis=1)


@dataclass
class SimConfig:
    angle_min: float = -math.pi
    angle_increment: float = 2 * math.pi / 360
    count: int = 360
    range_min: float = 0.15
    range_max: float = 12.0
    range_noise_sigma: float = 0.01
    scan_hz: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.scan_hz > 0:
            raise ValueError("scan_hz must be positive")
        if not self.range_noise_sigma >= 0:
            raise ValueError("range_noise_sigma must be non-negative")


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def raycast_ranges(world: World2D, pose: Pose2, angles: np.ndarray) -> np.ndarray:
    """Exact noise-free ranges along body-frame beam angles; NaN on a miss."""
    o = np.array([pose.x, pose.y])
    th = pose.theta + np.asarray(angles, dtype=float)
    dx, dy = np.cos(th)[:, None], np.sin(th)[:, None]
    p = world.segments[:, 0]
    e = world.segments[:, 1] - p
    wx, wy = (p[:, 0] - o[0])[None], (p[:, 1] - o[1])[None]
    ex, ey = e[:, 0][None], e[:, 1][None]
    denom = _cross(dx, dy, ex, ey)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = _cross(wx, wy, ex, ey) / denom
        u = _cross(wx, wy, dx, dy) / denom
        hit = (denom != 0) & (s > 0) & (u >= 0) & (u <= 1)
    s = np.where(hit, s, np.inf)
    r = s.min(axis=1)
    r[~np.isfinite(r)] = np.nan
    return r


def raycast(world: World2D, pose: Pose2, cfg: SimConfig, rng: np.random.Generator | None = None,
            t: float = 0.0) -> LaserScan:
    angles = cfg.angle_min + cfg.angle_increment * np.arange(cfg.count)
    r = raycast_ranges(world, pose, angles)
    if cfg.range_noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        r = r + rng.normal(0.0, cfg.range_noise_sigma, size=r.shape)
    with np.errstate(invalid="ignore"):
        r[(r < cfg.range_min) | (r > cfg.range_max)] = np.nan
    return LaserScan(t, cfg.angle_min, cfg.angle_increment, cfg.range_min, cfg.range_max, r)


def interpolate(waypoints, t: float) -> Pose2:
    """Pose at time t: linear in translation, shortest arc in heading."""
    times = [w[0] for w in waypoints]
    if t <= times[0]:
        return waypoints[0][1]
    if t >= times[-1]:
        return waypoints[-1][1]
    k = int(np.searchsorted(times, t, side="right")) - 1
    (t0, a), (t1, b) = waypoints[k], waypoints[k + 1]
    f = (t - t0) / (t1 - t0)
    if f == 0.0:
        return a
    return Pose2(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y),
                 a.theta + f * wrap_angle(b.theta - a.theta))


def generate_dataset(world: World2D, waypoints, cfg: SimConfig | None = None):
    """Scans at ``cfg.scan_hz`` along the waypoint path plus the noise-free ground truth."""
    cfg = cfg or SimConfig()
    waypoints = [(float(t), p) for t, p in waypoints]
    if not waypoints:
        raise BadWaypoints("no waypoints given")
    times = np.array([w[0] for w in waypoints])
    if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
        raise BadWaypoints("waypoint timestamps must be finite and strictly increasing")
    t0, t1 = times[0], times[-1]
    n = int(math.floor((t1 - t0) * cfg.scan_hz + 1e-9)) + 1
    rng = np.random.default_rng(cfg.seed)
    scans, stamps, poses = [], [], []
    for k in range(n):
        t = t0 + k / cfg.scan_hz
        pose = interpolate(waypoints, t)
        scans.append(raycast(world, pose, cfg, rng, t))
        stamps.append(t)
        poses.append(pose)
    return scans, Trajectory.from_poses(stamps, poses)


# -- presets ---------------------------------------------------------------


def _rect(x0, y0, x1, y1):
    return [[[x0, y0], [x1, y0]], [[x1, y0], [x1, y1]], [[x1, y1], [x0, y1]], [[x0, y1], [x0, y0]]]


def square_room(size: float = 5.0) -> World2D:
    """A size x size room with the robot's start 1.5 m in from the lower-left corner,
    plus two box obstacles that break the room's rotational symmetry."""
    lo = -1.5
    segs = _rect(lo, lo, lo + size, lo + size)
    segs += _rect(2.3, -0.6, 2.7, -0.2)
    segs += _rect(-0.9, 2.2, -0.3, 2.5)
    return World2D(segs)


def _loop_waypoints(corners, duration, turn_time, heading_wobble=None):
    """Drive a closed polygon, turning in place at every corner.

    ``heading_wobble(t)`` optionally adds a heading oscillation on straight legs.
    """
    legs = list(zip(corners, corners[1:] + corners[:1]))
    lengths = [math.dist(a, b) for a, b in legs]
    move_time = duration - turn_time * (len(legs) - 1)
    speed = sum(lengths) / move_time
    wps = []
    t = 0.0
    heading = math.atan2(legs[0][1][1] - legs[0][0][1], legs[0][1][0] - legs[0][0][0])
    for k, ((a, b), length) in enumerate(zip(legs, lengths)):
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        if k > 0:
            t += turn_time
        wps.append((t, Pose2(a[0], a[1], heading)))
        leg_time = length / speed
        if heading_wobble is not None:
            steps = max(2, int(round(leg_time / 0.2)))
            for j in range(1, steps):
                f = j / steps
                tj = t + f * leg_time
                wps.append((tj, Pose2(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]),
                                      heading + heading_wobble(tj))))
        t += leg_time
        wps.append((t, Pose2(b[0], b[1], heading)))
    return wps


def _square(side):
    return [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]


def _preset_square_loop():
    return square_room(), _loop_waypoints(_square(5.3 / 4), 34.5, 1.0)


def _preset_fast_short():
    return square_room(), _loop_waypoints(_square(5.0 / 4), 14.4, 0.5)


def _preset_aggressive_rotation():
    wobble = lambda t: 0.5 * math.sin(2 * math.pi * t / 2.0)  # noqa: E731
    return square_room(), _loop_waypoints(_square(5.0 / 4), 22.4, 0.6, wobble)


def _preset_slow_longest():
    corners = [(0.0, 0.0), (1.6, 0.0), (1.6, 1.0), (0.0, 1.0)]
    return square_room(), _loop_waypoints(corners, 44.3, 1.0)


PRESETS = {
    "square_loop": _preset_square_loop,
    "fast_short": _preset_fast_short,
    "aggressive_rotation": _preset_aggressive_rotation,
    "slow_longest": _preset_slow_longest,
}


def preset(name: str):
    """(world, waypoints) for a named preset."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
