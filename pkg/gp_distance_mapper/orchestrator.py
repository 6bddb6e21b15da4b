#!/usr/bin/env python3
"""
gp_distance_mapper/orchestrator.py

Command-line entry point:
  sim run   Render a scene, integrate every frame, write map/slice/metrics.
  replay    Integrate a recorded PLY + pose sequence.
  query     Sample distance and gradient of a PLY map on a planar grid.
  plan      Reactive rollout or CHOMP on a PLY map or a live scene.
  bench     Resolution sweep against a nearest-point baseline.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from gp_distance_mapper import config
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore
from gp_distance_mapper.mapping.providers.ply_io import read_ply
from gp_distance_mapper.planning.orchestrator import MODES, run_plan
from gp_distance_mapper.simulation.orchestrator import (
    DEFAULT_RESOLUTIONS,
    bench,
    dump_query_grid,
    load_query_grid,
    load_scene,
    replay,
    run_pipeline,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Reports usage problems as ConfigError instead of exiting with argparse's status 2."""

    def error(self, message):
        raise config.ConfigError(f"{self.prog}: {message}")


def _resolutions(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid resolution list {text!r}") from e
    if not values or any(v <= 0.0 for v in values):
        raise argparse.ArgumentTypeError(f"resolutions must be positive, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="gpdm",
        description="Incremental GP distance field mapping, evaluation and planning.",
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Logging level (default from GPDM_LOG_LEVEL).")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    sim = commands.add_parser("sim", help="Synthetic scene runs.")
    sim_commands = sim.add_subparsers(dest="sim_command", required=True, parser_class=_ArgumentParser)
    run = sim_commands.add_parser("run", help="Render a scene and map it frame by frame.")
    run.add_argument("--scene", required=True, help="Scene JSON file or built-in name (ball_on_table, room).")
    run.add_argument("--resolution", type=float, default=config.TRAINING_RESOLUTION, help="Training resolution in metres.")
    run.add_argument("--eta", type=float, default=None, help="Fusion threshold in metres (default 5x resolution).")
    run.add_argument("--out", type=Path, required=True, help="Output directory.")
    run.add_argument("--seed", type=int, default=config.SEED, help="Seed of depth noise and query sampling.")
    run.add_argument("--noise", type=float, default=None, help="Depth noise standard deviation in metres.")
    run.add_argument("--evaluate-every", type=int, default=0, help="Evaluate after every n-th frame (0: last frame only).")

    rep = commands.add_parser("replay", help="Map a recorded PLY + pose sequence.")
    rep.add_argument("--dataset", type=Path, required=True, help="Dataset directory.")
    rep.add_argument("--resolution", type=float, default=config.TRAINING_RESOLUTION, help="Training resolution in metres.")
    rep.add_argument("--out", type=Path, required=True, help="Output directory.")

    query = commands.add_parser("query", help="Sample a PLY map on a planar grid.")
    query.add_argument("--map", type=Path, required=True, help="PLY map, e.g. map.ply of a run.")
    query.add_argument("--grid", type=Path, required=True, help="Grid JSON (origin, axis_u, axis_v, spacing, count_u, count_v).")
    query.add_argument("--out", type=Path, required=True, help="Output CSV.")
    query.add_argument("--resolution", type=float, default=config.TRAINING_RESOLUTION, help="Training resolution of the map.")
    query.add_argument("--lengthscale", type=float, default=config.LENGTHSCALE, help="Kernel lengthscale in metres.")

    plan = commands.add_parser("plan", help="Plan on a PLY map or a live scene.")
    plan.add_argument("--map", required=True, help="PLY map, scene JSON or built-in scene name.")
    plan.add_argument("--scenario", type=Path, required=True, help="Planner scenario JSON.")
    plan.add_argument("--mode", choices=MODES, default=MODES[0], help="Planner.")
    plan.add_argument("--out", type=Path, required=True, help="Output directory.")

    sweep = commands.add_parser("bench", help="Resolution sweep on a scene.")
    sweep.add_argument("--scene", required=True, help="Scene JSON file or built-in name.")
    sweep.add_argument(
        "--resolutions", type=_resolutions, default=list(DEFAULT_RESOLUTIONS),
        help="Comma-separated training resolutions in metres.",
    )
    sweep.add_argument("--out", type=Path, required=True, help="Output CSV.")
    sweep.add_argument("--seed", type=int, default=config.SEED, help="Seed of depth noise and query sampling.")
    return parser


def _run(args: argparse.Namespace) -> None:
    if args.command == "sim":
        scene = load_scene(args.scene, depth_noise=args.noise)
        result = run_pipeline(
            scene, resolution=args.resolution, eta=args.eta, out_dir=args.out,
            seed=args.seed, evaluate_every=args.evaluate_every,
        )
        print(f"✅  Mapped {len(result.stats)} frames: rmse={result.report.rmse:.4f} m, results in {args.out}")
    elif args.command == "replay":
        result = replay(args.dataset, args.resolution, out_dir=args.out)
        print(f"✅  Replayed {len(result.stats)} frames, {result.report.store_size} points, results in {args.out}")
    elif args.command == "query":
        grid = load_query_grid(args.grid)
        store = OctreeStore(KernelParams(lengthscale=args.lengthscale), args.resolution)
        store.import_points(read_ply(args.map))
        points, _ = dump_query_grid(store, grid, args.out)
        print(f"✅  Wrote {len(points)} samples to {args.out}")
    elif args.command == "plan":
        summary = run_plan(args.map, args.scenario, args.mode, out_dir=args.out)
        print(f"✅  {args.mode} plan: {summary['waypoints']} waypoints, min clearance {summary['min_clearance']:.3f} m")
    elif args.command == "bench":
        rows = bench(load_scene(args.scene), args.resolutions, out_csv=args.out, seed=args.seed)
        print(f"✅  Bench of {len(rows)} resolutions written to {args.out}")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except config.ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    config.configure_logging(str(args.log_level).upper())
    try:
        _run(args)
    except config.ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.exception(f"Run failed: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
