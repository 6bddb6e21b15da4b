"""
gp_distance_mapper/planning/orchestrator.py

Plans on a mapped distance field:
  1. Loads and validates the planner scenario (planning/schemas/planner_scenario.json).
  2. Builds the field: a PLY map is imported into a fresh store; a scene (JSON file or built-in
     name) is rendered and integrated up to the scenario time.
  3. Runs the reactive rollout or CHOMP on the field. A reactive rollout on a scene keeps
     integrating frames while it moves (one frame per step until the scene ends). CHOMP
     replanning integrates the following frames one at a time and re-optimises the previous
     trajectory against each updated field.
  4. Writes trajectory.csv, cost_history.csv and summary.json into the output directory, plus
     replans.csv when replanning.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from gp_distance_mapper import config
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.mapping.features.fusion.fusion import FusionParams, integrate_frame
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore, StoreConfig
from gp_distance_mapper.mapping.providers.ply_io import read_ply
from gp_distance_mapper.planning.features.chomp.chomp import (
    ChompParams,
    SphereBody,
    Trajectory,
    body_clearance,
    chomp_optimize,
)
from gp_distance_mapper.planning.features.reactive.reactive import ReactiveParams, reactive_rollout
from gp_distance_mapper.simulation.features.renderer.renderer import render_frame
from gp_distance_mapper.simulation.features.scene.scene import Scene
from gp_distance_mapper.simulation.orchestrator import load_scene

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA = Path(__file__).parent / "schemas" / "planner_scenario.json"

MODE_REACTIVE = "reactive"
MODE_CHOMP = "chomp"
MODE_CHOMP_REPLAN = "chomp_replan"
MODES = (MODE_REACTIVE, MODE_CHOMP, MODE_CHOMP_REPLAN)

DEFAULT_WAYPOINTS = 20
DEFAULT_MAX_STEPS = 500


def load_scenario(path: Path) -> dict:
    return config.load_json_config(Path(path), SCENARIO_SCHEMA)


class _LiveScene:
    """Renders and integrates the frames of a scene in order, one per advance() call."""

    def __init__(self, scene: Scene, store: OctreeStore, params: FusionParams, kernel: KernelParams, seed: int):
        self.scene = scene
        self.store = store
        self.params = params
        self.kernel = kernel
        self.times = scene.frame_times()
        self.next_index = 0
        self.rng = np.random.default_rng(seed)

    def advance(self) -> bool:
        if self.next_index >= len(self.times):
            return False
        t = float(self.times[self.next_index])
        frame = render_frame(self.scene, t, self.rng, index=self.next_index)
        integrate_frame(self.store, frame, self.params, self.kernel)
        self.next_index += 1
        return True

    def advance_until(self, t: float) -> None:
        while self.next_index < len(self.times) and self.times[self.next_index] <= t + 1e-9:
            self.advance()


def _scenario_kernel(scenario: dict, default: KernelParams) -> KernelParams:
    if "kernel" not in scenario:
        return default
    doc = {
        "lengthscale": default.lengthscale,
        "signal_variance": default.signal_variance,
        "noise_variance": default.noise_variance,
    }
    doc.update(scenario["kernel"])
    return KernelParams.from_dict(doc)


def _body(scenario: dict) -> SphereBody:
    body = scenario.get("body", {})
    if "spheres" in body:
        return SphereBody.from_dict(body["spheres"])
    return SphereBody.chain(**body.get("chain", {}))


def _write_trajectory(path: Path, waypoints: np.ndarray) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "x", "y", "z"])
        for k, (x, y, z) in enumerate(waypoints):
            writer.writerow([k, repr(float(x)), repr(float(y)), repr(float(z))])


def _write_history(path: Path, history: List[float]) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "cost"])
        for i, cost in enumerate(history):
            writer.writerow([i, repr(float(cost))])


def _write_replans(path: Path, rows: List[Dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["frame", "time", "iterations", "final_cost", "min_clearance"])
        writer.writeheader()
        writer.writerows(rows)


def _replan(
    live: _LiveScene,
    trajectory: Trajectory,
    body: SphereBody,
    params: ChompParams,
    frames: Optional[int],
) -> Tuple[Trajectory, List[float], List[Dict]]:
    """Integrate the next frames one by one, re-optimising the previous trajectory after each."""
    history: List[float] = []
    rows: List[Dict] = []
    while (frames is None or len(rows) < frames) and live.advance():
        trajectory, history = chomp_optimize(trajectory, body, live.store, params)
        clearance = float(body_clearance(trajectory, body, live.store).min())
        rows.append({
            "frame": live.next_index - 1,
            "time": float(live.times[live.next_index - 1]),
            "iterations": len(history) - 1,
            "final_cost": history[-1],
            "min_clearance": clearance,
        })
        logger.debug(f"Replanned on frame {live.next_index - 1}: clearance {clearance:.3f} m")
    return trajectory, history, rows


def run_plan(
    map_source: Union[str, Path],
    scenario: Union[dict, Path],
    mode: str = MODE_REACTIVE,
    out_dir: Optional[Path] = None,
    seed: int = config.SEED,
) -> Dict:
    """
    Plan from scenario["start"] to scenario["goal"] on the field of `map_source`.

    Args:
        map_source: Path of a PLY map, or a scene (JSON path or built-in name).
        scenario:   Scenario document or path of a scenario JSON file.
        mode:       "reactive", "chomp" or "chomp_replan" (scene maps only).

    Returns:
        The summary written to summary.json.

    Raises:
        ConfigError:   If the scenario or scene file fails validation.
        PlanningError: If CHOMP cannot plan from the given endpoints.
        DatasetError / PlyFormatError: If the map cannot be read.
    """
    if mode not in MODES:
        raise config.ConfigError(f"Unknown planning mode {mode!r}; expected one of {MODES}")
    if not isinstance(scenario, dict):
        scenario = load_scenario(scenario)
    else:
        scenario = config.validate_document(scenario, SCENARIO_SCHEMA)
    if mode == MODE_CHOMP_REPLAN and str(map_source).lower().endswith(".ply"):
        raise config.ConfigError("Replanning needs a scene to integrate frames from, not a PLY map")

    live: Optional[_LiveScene] = None
    replans: Optional[List[Dict]] = None
    if str(map_source).lower().endswith(".ply"):
        kernel = _scenario_kernel(scenario, KernelParams())
        resolution = scenario.get("resolution", config.TRAINING_RESOLUTION)
        store = OctreeStore(kernel, resolution)
        store.import_points(read_ply(Path(map_source)))
    else:
        scene = load_scene(map_source)
        kernel = _scenario_kernel(scenario, scene.kernel)
        resolution = scenario.get("resolution", config.TRAINING_RESOLUTION)
        fusion_doc = {k: v for k, v in scene.fusion.items() if k != "training_resolution"}
        store = OctreeStore(kernel, resolution, StoreConfig.from_dict(scene.store))
        live = _LiveScene(scene, store, FusionParams.from_dict(fusion_doc, resolution), kernel, seed)
        live.advance_until(float(scenario.get("time", 0.0)))
    logger.info(f"Planning ({mode}) on a map of {len(store)} points")

    start = np.asarray(scenario["start"], dtype=np.float64)
    goal = np.asarray(scenario["goal"], dtype=np.float64)
    summary: Dict = {"mode": mode, "map": str(map_source), "start": start.tolist(), "goal": goal.tolist()}

    if mode == MODE_REACTIVE:
        params = ReactiveParams.from_dict(scenario.get("reactive", {}))
        hook = (lambda step: live.advance()) if live is not None else None
        result = reactive_rollout(start, goal, store, params, scenario.get("max_steps", DEFAULT_MAX_STEPS), hook)
        waypoints, history = result.path, []
        summary.update(reached=result.reached, steps=result.steps, min_clearance=result.min_clearance)
    else:
        params = ChompParams.from_dict(scenario.get("chomp", {}))
        body = _body(scenario)
        init = Trajectory.straight(start, goal, scenario.get("waypoints", DEFAULT_WAYPOINTS))
        initial_min_clearance = float(body_clearance(init, body, store).min())
        optimized, history = chomp_optimize(init, body, store, params)
        initial_cost = history[0]
        if mode == MODE_CHOMP_REPLAN:
            optimized, replanned, replans = _replan(live, optimized, body, params, scenario.get("replan_frames"))
            history = replanned or history
            summary.update(
                replans=len(replans),
                worst_clearance=min([row["min_clearance"] for row in replans], default=None),
            )
        waypoints = optimized.waypoints
        summary.update(
            iterations=len(history) - 1,
            initial_cost=initial_cost,
            final_cost=history[-1],
            min_clearance=float(body_clearance(optimized, body, store).min()),
            initial_min_clearance=initial_min_clearance,
        )
    summary["waypoints"] = len(waypoints)
    summary["path_length"] = float(np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum())

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_trajectory(out_dir / "trajectory.csv", waypoints)
        _write_history(out_dir / "cost_history.csv", history)
        if replans is not None:
            _write_replans(out_dir / "replans.csv", replans)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
        logger.info(f"Plan written to {out_dir}")
    return summary
