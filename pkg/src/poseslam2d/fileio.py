"""Text file formats: JSON-lines scan logs, TUM-style trajectories, world and
waypoint files, and ``key = value`` configs.

Everything written here is byte-deterministic for fixed inputs.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import OrderError, ParseError
from .evaluation import Trajectory
from .factor_graph import LMConfig
from .geometry import Pose2
from .scan_matching import LaserScan
from .simulator import World2D

SCAN_KEYS = ("t", "angle_min", "angle_increment", "range_min", "range_max", "ranges")


def fmt_num(v: float) -> str:
    """Shortest round-tripping text; integral values print without a point."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _lines(path):
    """(line_number, stripped_text) for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield no, line


def _floats(path, no, fields, n):
    if len(fields) != n:
        raise ParseError(path, no, f"expected {n} fields, got {len(fields)}")
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(path, no, str(exc)) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(path, no, "non-finite value")
    return vals


# -- scans ------------------------------------------------------------------


def scan_to_json(scan: LaserScan) -> str:
    ranges = [None if not math.isfinite(r) else float(r) for r in scan.ranges]
    rec = {
        "t": float(scan.t),
        "angle_min": float(scan.angle_min),
        "angle_increment": float(scan.angle_increment),
        "range_min": float(scan.range_min),
        "range_max": float(scan.range_max),
        "ranges": ranges,
    }
    return json.dumps(rec, allow_nan=False)


def save_scans(path, scans) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in scans:
            fh.write(scan_to_json(s) + "\n")


def _scan_from_record(path, no, rec) -> LaserScan:
    if not isinstance(rec, dict):
        raise ParseError(path, no, "expected a JSON object")
    missing = [k for k in SCAN_KEYS if k not in rec]
    if missing:
        raise ParseError(path, no, f"missing keys: {', '.join(missing)}")
    scalars = {}
    for k in SCAN_KEYS[:-1]:
        v = rec[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(path, no, f"{k} must be a number")
        scalars[k] = float(v)
    raw = rec["ranges"]
    if not isinstance(raw, list):
        raise ParseError(path, no, "ranges must be a list")
    ranges = np.empty(len(raw))
    for i, r in enumerate(raw):
        if r is None:
            ranges[i] = np.nan
        elif isinstance(r, bool) or not isinstance(r, (int, float)):
            raise ParseError(path, no, f"ranges[{i}] must be a number or null")
        else:
            ranges[i] = r
    try:
        return LaserScan(ranges=ranges, **scalars)
    except ValueError as exc:
        raise ParseError(path, no, str(exc)) from None


def load_scans(path) -> list[LaserScan]:
    """Parse a scan log. Timestamps must strictly increase from line to line."""
    scans = []
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, no, f"invalid JSON: {exc.msg}") from None
            scan = _scan_from_record(path, no, rec)
            if scans and not scan.t > scans[-1].t:
                raise OrderError(path, no, f"timestamp {scan.t} does not follow {scans[-1].t}")
            scans.append(scan)
    return scans


# -- trajectories -----------------------------------------------------------


def yaw_quaternion(theta: float) -> tuple[float, float]:
    """(qz, qw) of a rotation about z, with qw >= 0.

    Each component comes from whichever of the half-angle formulas is better
    conditioned. A cosine within 1e-15 of zero is taken as exactly zero, so
    the float nearest pi/2 prints as the exact quarter-turn quaternion.
    """
    c = math.cos(theta)
    if abs(c) < 1e-15:
        c = 0.0
    if c <= 0.5:
        qz = math.copysign(math.sqrt((1.0 - c) / 2.0), theta)
    else:
        qz = math.sin(theta / 2.0)
    qw = math.sqrt((1.0 + c) / 2.0) if c >= -0.5 else math.cos(theta / 2.0)
    return qz, qw


def trajectory_line(t: float, p: Pose2) -> str:
    qz, qw = yaw_quaternion(p.theta)
    vals = (t, p.x, p.y, 0.0, 0.0, 0.0, qz, qw)
    return " ".join(fmt_num(v) for v in vals)


def save_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# t x y z qx qy qz qw\n")
        for i in range(len(traj)):
            t, p = traj[i]
            fh.write(trajectory_line(t, p) + "\n")


def load_trajectory(path) -> Trajectory:
    stamps, rows = [], []
    for no, line in _lines(path):
        t, x, y, _z, qx, qy, qz, qw = _floats(path, no, line.split(), 8)
        if qx != 0.0 or qy != 0.0:
            raise ParseError(path, no, "only yaw rotations are supported")
        if qz == 0.0 and qw == 0.0:
            raise ParseError(path, no, "zero quaternion")
        if stamps and not t > stamps[-1]:
            raise OrderError(path, no, f"timestamp {t} does not follow {stamps[-1]}")
        stamps.append(t)
        rows.append((x, y, 2.0 * math.atan2(qz, qw)))
    return Trajectory(np.array(stamps), np.array(rows).reshape(-1, 3))


# -- worlds and waypoints ---------------------------------------------------


def load_world(path) -> World2D:
    """One segment per line: ``x1 y1 x2 y2``."""
    segs = []
    for no, line in _lines(path):
        x1, y1, x2, y2 = _floats(path, no, line.split(), 4)
        if x1 == x2 and y1 == y2:
            raise ParseError(path, no, "zero-length segment")
        segs.append((x1, y1, x2, y2))
    if not segs:
        raise ParseError(path, 1, "world has no segments")
    return World2D(np.array(segs).reshape(-1, 2, 2))


def save_world(path, world: World2D) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seg in world.segments:
            fh.write(" ".join(fmt_num(v) for v in seg.ravel()) + "\n")


def load_waypoints(path) -> list[tuple[float, Pose2]]:
    """One waypoint per line: ``t x y theta``."""
    out = []
    for no, line in _lines(path):
        t, x, y, th = _floats(path, no, line.split(), 4)
        if out and not t > out[-1][0]:
            raise OrderError(path, no, f"timestamp {t} does not follow {out[-1][0]}")
        out.append((t, Pose2(x, y, th)))
    return out


# -- key = value configs ----------------------------------------------------


def _coerce(path, no, key, text, default):
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"not a boolean: {text!r}")
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ParseError(path, no, f"{key}: {exc}") from None


def parse_assignments(items, cls, path="<args>", start_line=1):
    """Build ``cls`` from ``(line, "key = value")`` items.

    Keys are the dataclass field names; ``lm.<field>`` reaches the nested
    optimizer settings of a pipeline config.
    """
    defaults = cls()
    fields = {f.name for f in dataclasses.fields(cls)}
    lm_fields = {f.name for f in dataclasses.fields(LMConfig)}
    kwargs, lm_over = {}, {}
    for no, text in items:
        if "=" not in text:
            raise ParseError(path, no, f"expected 'key = value', got {text!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key.startswith("lm.") and "lm" in fields and key[3:] in lm_fields:
            lm_over[key[3:]] = _coerce(path, no, key, value, getattr(defaults.lm, key[3:]))
        elif key in fields and key != "lm":
            kwargs[key] = _coerce(path, no, key, value, getattr(defaults, key))
        else:
            raise ParseError(path, no, f"unknown key {key!r}")
    if lm_over:
        kwargs["lm"] = LMConfig(**lm_over)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ParseError(path, start_line, str(exc)) from None


def load_config(path, cls):
    return parse_assignments(list(_lines(path)), cls, path)


def save_config(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                for g in dataclasses.fields(v):
                    fh.write(f"{f.name}.{g.name} = {getattr(v, g.name)!r}\n")
            else:
                fh.write(f"{f.name} = {v!r}\n")


def ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
