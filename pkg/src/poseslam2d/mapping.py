"""World-frame hit-count maps built from scans along a trajectory, and their
rendering as binary graymaps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoAssociations, NoMatches
from .evaluation import DEFAULT_MAX_DT, Trajectory, associate
from .geometry import Pose2, transform_points
from .scan_matching import scan_to_cloud

DEFAULT_RESOLUTION = 0.05
DEFAULT_THRESHOLD = 2
MARGIN = 1.0

OCCUPIED, UNKNOWN, EMPTY = 0, 205, 254


@dataclass
class GridMap:
    """Axis-aligned grid. ``hits[row, col]`` counts points in the cell whose
    lower-left corner is ``origin + (col, row) * resolution``."""

    resolution: float
    origin: Pose2
    width: int
    height: int
    hits: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.hits = np.asarray(self.hits, dtype=np.int64).reshape(self.height, self.width)

    def cell_of(self, pts) -> np.ndarray:
        """(col, row) indices of world points; may fall outside the grid."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        local = transform_points(self.origin.inverse(), pts)
        return np.floor(local / self.resolution).astype(np.int64)

    def cell_centers(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=float).reshape(-1, 2)
        return transform_points(self.origin, (cells + 0.5) * self.resolution)

    def occupied(self, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
        """(col, row) of every cell with at least ``threshold`` hits."""
        rows, cols = np.nonzero(self.hits >= threshold)
        return np.column_stack([cols, rows])

    def total_hits(self) -> int:
        return int(self.hits.sum())


def _scan_stamps(scans):
    stamps = np.array([s.t for s in scans], dtype=float)
    return Trajectory(stamps, np.zeros((len(stamps), 3)))


def world_points(traj: Trajectory, scans, max_dt: float = DEFAULT_MAX_DT) -> list[np.ndarray]:
    """Valid returns of every associated scan, in the world frame."""
    if len(scans) == 0 or len(traj) == 0:
        raise NoAssociations("nothing to associate")
    try:
        pairs = associate(traj, _scan_stamps(scans), max_dt)
    except NoMatches as exc:
        raise NoAssociations(str(exc)) from exc
    out = []
    for i, j in pairs:
        pts = scan_to_cloud(scans[j], min_valid=0).points
        out.append(transform_points(traj[i][1], pts))
    return out


def build_map(traj: Trajectory, scans, resolution: float = DEFAULT_RESOLUTION,
              max_dt: float = DEFAULT_MAX_DT) -> GridMap:
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    chunks = world_points(traj, scans, max_dt)
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    if len(pts) == 0:
        return GridMap(resolution, Pose2(), 1, 1, np.zeros((1, 1)))
    lo = pts.min(axis=0) - MARGIN
    hi = pts.max(axis=0) + MARGIN
    # snapping the origin to the resolution lattice keeps binning stable
    # under translations that are whole multiples of a cell
    ox = math.floor(lo[0] / resolution) * resolution
    oy = math.floor(lo[1] / resolution) * resolution
    width = int(math.floor((hi[0] - ox) / resolution)) + 1
    height = int(math.floor((hi[1] - oy) / resolution)) + 1
    grid = GridMap(resolution, Pose2(ox, oy, 0.0), width, height, np.zeros((height, width)))
    cells = grid.cell_of(pts)
    flat = cells[:, 1] * width + cells[:, 0]
    grid.hits = np.bincount(flat, minlength=width * height).reshape(height, width)
    return grid


def to_image(grid: GridMap, occupied_threshold: int = DEFAULT_THRESHOLD) -> bytes:
    """Binary PGM. Row 0 is the top of the map (largest y)."""
    if occupied_threshold < 1:
        raise ValueError("occupied_threshold must be at least 1")
    hits = grid.hits[::-1]
    img = np.full(hits.shape, EMPTY, dtype=np.uint8)
    img[hits > 0] = UNKNOWN
    img[hits >= occupied_threshold] = OCCUPIED
    header = f"P5 {grid.width} {grid.height} 255\n".encode("ascii")
    return header + img.tobytes()


def wall_fidelity(grid: GridMap, world, threshold: int = DEFAULT_THRESHOLD) -> float:
    """Fraction of occupied cells within one cell of a wall of ``world``.

    A cell counts when its center lies within 1.5 cells of a segment, i.e.
    when the wall passes through the cell or one of its eight neighbors
    (exact for axis-aligned walls, conservative otherwise).
    """
    cells = grid.occupied(threshold)
    if len(cells) == 0:
        return 0.0
    d = world.distance_to(grid.cell_centers(cells))
    return float(np.mean(d <= 1.5 * grid.resolution))
