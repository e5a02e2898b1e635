"""Command-line driver: ``poseslam2d {sim,run,eval,map}``.

Exit status is 0 on success, 1 for usage errors and 2 for bad or unusable data.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import fileio
from .errors import SlamError
from .evaluation import DEFAULT_MAX_DT, ape, traj_stats
from .mapping import DEFAULT_RESOLUTION, DEFAULT_THRESHOLD, build_map, to_image
from .pipeline import PipelineConfig, run_offline
from .simulator import PRESETS, SimConfig, generate_dataset, preset

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _settings(args, cls):
    """Config file first, then ``--set`` overrides in order."""
    overrides = [(i, text) for i, text in enumerate(args.set or [], 1)]
    # parsed alone first so a bad override is reported against --set
    fileio.parse_assignments(overrides, cls, "--set")
    if not args.config:
        return fileio.parse_assignments(overrides, cls, "--set")
    return fileio.parse_assignments(list(fileio._lines(args.config)) + overrides, cls, args.config)


def _write_map(path, traj, scans, resolution, threshold, max_dt):
    grid = build_map(traj, scans, resolution, max_dt)
    with open(fileio.ensure_parent(path), "wb") as fh:
        fh.write(to_image(grid, threshold))


def cmd_sim(args):
    if args.preset:
        world, waypoints = preset(args.preset)
    else:
        world = fileio.load_world(args.world)
        waypoints = fileio.load_waypoints(args.waypoints)
    cfg = _settings(args, SimConfig)
    if args.seed is not None:
        cfg.seed = args.seed
    scans, truth = generate_dataset(world, waypoints, cfg)
    fileio.save_scans(fileio.ensure_parent(args.scans), scans)
    fileio.save_trajectory(fileio.ensure_parent(args.truth), truth)
    if args.world_out:
        fileio.save_world(fileio.ensure_parent(args.world_out), world)
    print(f"wrote {len(scans)} scans to {args.scans}", file=sys.stderr)


def cmd_run(args):
    cfg = _settings(args, PipelineConfig).validate()
    scans = fileio.load_scans(args.scans)
    if not scans:
        raise SlamError(f"{args.scans}: no scans")
    out = []
    traj = run_offline(cfg, scans, pipeline_out=out)
    if len(traj) == 0:
        raise SlamError("no scan could be processed")
    fileio.save_trajectory(fileio.ensure_parent(args.out), traj)
    if args.map:
        _write_map(args.map, traj, scans, args.resolution, args.threshold, DEFAULT_MAX_DT)
    timing = out[0].timing
    mean_ms = 1e3 * sum(timing.total) / len(timing.total)
    print(f"{len(traj)} poses, {mean_ms:.1f} ms/scan", file=sys.stderr)


def cmd_eval(args):
    ref = fileio.load_trajectory(args.ref)
    est = fileio.load_trajectory(args.est)
    hz = None if args.hz <= 0 else args.hz
    report = ape(ref, est, align_est=not args.no_align, hz=hz, max_dt=args.max_dt).as_dict()
    if args.stats:
        s = traj_stats(est)
        report["stats"] = {"duration": s.duration, "total_distance": s.total_distance,
                           "avg_velocity": s.avg_velocity}
    print(json.dumps(report))


def cmd_map(args):
    scans = fileio.load_scans(args.scans)
    traj = fileio.load_trajectory(args.traj)
    _write_map(args.out, traj, scans, args.resolution, args.threshold, args.max_dt)


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _add_config(p, what):
    p.add_argument("--config", help=f"'key = value' file with {what} field names")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable, applied after --config)")


def _add_map_opts(p):
    p.add_argument("--resolution", type=_positive(float), default=DEFAULT_RESOLUTION,
                   help="map cell size in meters (default %(default)s)")
    p.add_argument("--threshold", type=_positive(int), default=DEFAULT_THRESHOLD,
                   help="hits for a cell to render occupied (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="poseslam2d", description="Sliding-window 2D lidar PoseSLAM.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sim", help="simulate scans and ground truth")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in world and path")
    src.add_argument("--world", help="world file, one 'x1 y1 x2 y2' segment per line")
    p.add_argument("--waypoints", help="waypoint file, one 't x y theta' per line (with --world)")
    p.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    p.add_argument("--scans", required=True, help="output scan log (JSON lines)")
    p.add_argument("--truth", required=True, help="output ground-truth trajectory")
    p.add_argument("--world-out", help="also write the world segments here")
    _add_config(p, "simulator")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("run", help="run SLAM over a scan log")
    p.add_argument("--scans", required=True, help="input scan log (JSON lines)")
    p.add_argument("--out", required=True, help="output trajectory file")
    p.add_argument("--map", help="also render a graymap (PGM) of the result")
    _add_map_opts(p)
    _add_config(p, "pipeline")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="absolute pose error of an estimate")
    p.add_argument("--ref", required=True, help="reference trajectory")
    p.add_argument("--est", required=True, help="estimated trajectory")
    p.add_argument("--no-align", action="store_true", help="skip SE(2) alignment")
    p.add_argument("--hz", type=float, default=10.0,
                   help="downsampling rate, 0 disables (default %(default)s)")
    p.add_argument("--max-dt", type=_positive(float), default=DEFAULT_MAX_DT,
                   help="association window in seconds (default %(default)s)")
    p.add_argument("--stats", action="store_true", help="add duration, distance and velocity")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="render scans along a trajectory")
    p.add_argument("--scans", required=True, help="input scan log (JSON lines)")
    p.add_argument("--traj", required=True, help="trajectory to place the scans")
    p.add_argument("--out", required=True, help="output PGM file")
    p.add_argument("--max-dt", type=_positive(float), default=DEFAULT_MAX_DT,
                   help="scan-to-pose association window (default %(default)s)")
    _add_map_opts(p)
    p.set_defaults(func=cmd_map)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sim" and args.world and not args.waypoints:
            parser.error("--world requires --waypoints")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (SlamError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"poseslam2d: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
