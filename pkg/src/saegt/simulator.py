"""Episode loop: measure, map, expand, select, navigate, repeat.

The loop body per iteration ``t``:

1. intersect the confidence intervals with the latest posterior bounds
2. expand the safe set from the previous one
3. compute expansion potentials and the frontier
4. stop if the goal is reached, the frontier is exhausted or the budget is spent
5. pick a subgoal and drive to it with the reactive controller
6. take one noisy measurement where the robot stopped and refit the GP
7. evaluate the posterior over the whole grid for the next iteration

The bootstrap measurements play the role of iteration zero: the first
confidence update already uses their posterior.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry, navigator, planner, regions
from .config import RunConfig
from .errors import ConfigError, OutOfBounds
from .gp_map import GridPosterior, Hyperparams, TraversabilityGP
from .grid import Grid, format_value
from .planner import PlannerConfig, Reason, Status
from .terrain import TerrainGrid, load_terrain

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "t", "status", "reason", "robot_x", "robot_y", "subgoal_x", "subgoal_y",
    "subgoal_cell", "measurement", "safe_cells", "frontier_cells", "mean_width",
    "ticks", "stalled", "inconsistent_cells", "safety_violations",
]
INT_COLUMNS = {"t", "subgoal_cell", "safe_cells", "frontier_cells", "ticks", "stalled",
               "inconsistent_cells", "safety_violations"}
TEXT_COLUMNS = {"status", "reason"}
TRAJECTORY_COLUMNS = ["tick", "x", "y", "subgoal_id"]

# detour waypoints keep this many cells clear of the free-space boundary
_ROUTE_CLEARANCE = 0.1


def measure(terrain: TerrainGrid, x, noise_sd: float, rng: np.random.Generator) -> float:
    """Bilinear ground truth plus Gaussian noise.  Draws exactly one normal."""
    if not terrain.grid.contains(x):
        raise OutOfBounds(f"measurement site {tuple(x)} outside terrain")
    eps = rng.normal(0.0, 1.0) * noise_sd
    return terrain.interpolate(x) + eps


def hyperparams(cfg: RunConfig) -> Hyperparams:
    return Hyperparams(cfg.signal_variance, cfg.length_scale, cfg.noise_variance,
                       cfg.jitter, cfg.prior_mean)


def initial_safe_set(cfg: RunConfig, grid: Grid) -> np.ndarray:
    if not grid.contains(cfg.start):
        raise ConfigError(f"start {cfg.start} outside terrain extent {grid.extent}")
    xmin, ymin, xmax, ymax = grid.extent
    sx, sy = cfg.start
    r = cfg.start_radius
    if sx - r < xmin or sx + r > xmax or sy - r < ymin or sy + r > ymax:
        raise ConfigError(f"initial safe disk (radius {r}) around {cfg.start} leaves the terrain")
    s0 = grid.disk_mask(cfg.start, r)
    s0.ravel()[grid.cell_of(cfg.start)] = True
    return s0


def bootstrap(cfg: RunConfig, terrain: TerrainGrid, rng: np.random.Generator):
    """Seed the GP with measurements drawn uniformly in the initial disk.

    Returns ``(gp, s0, confidence, sites)``.
    """
    grid = terrain.grid
    s0 = initial_safe_set(cfg, grid)
    gp = TraversabilityGP(hyperparams(cfg))
    sites = []
    for _ in range(cfg.bootstrap_samples):
        rad = cfg.start_radius * np.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2 * np.pi)
        x = np.array([cfg.start_x + rad * np.cos(ang), cfg.start_y + rad * np.sin(ang)])
        y = measure(terrain, x, cfg.noise_sd, rng)
        gp.add_observation(x, y)
        sites.append(x)
    conf = regions.init_confidence(grid, s0, cfg.threshold)
    return gp, s0, conf, np.array(sites)


@dataclass
class EpisodeResult:
    config: RunConfig
    status: Status
    iterations: int
    rows: list
    trajectory: list
    decisions: list
    safety_violations: int
    containment_violations: int
    nesting_violations: int
    monotonicity_violations: int
    frontier_violations: int
    measurement_violations: int
    stalls: int
    safe_fraction: float
    safe_history: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "safety_violations": self.safety_violations,
            "containment_violations": self.containment_violations,
            "stalls": self.stalls,
            "safe_fraction": self.safe_fraction,
            "seed": self.config.seed,
            "mode": self.config.mode,
        }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return format_value(v)
    return str(v)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRICS_COLUMNS])
    return buf.getvalue()


def trajectory_csv(traj) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for tick, x, y, sid in traj:
        w.writerow([tick, format_value(x), format_value(y), sid])
    return buf.getvalue()


class _Snapshotter:
    def __init__(self, out_dir, grid, cfg, terrain_path):
        self.dir = Path(out_dir) / "snapshots" if out_dir is not None else None
        self.grid = grid
        self.cfg = cfg
        self.terrain_path = terrain_path
        self.written = []

    def __call__(self, t, conf, state, model, robot_pos, lfs, subgoal):
        if self.dir is None:
            return
        d = self.dir / f"iter_{t:06d}"
        regions.export_layers(d, self.grid, conf, state)
        extra = [("local", lfs.polygon)] if lfs is not None else []
        if model is not None:
            geometry.write_polygon_records(d / "geometry.txt", model, extra)
        meta = {
            "t": t,
            "robot": [float(robot_pos[0]), float(robot_pos[1])],
            "subgoal": None if subgoal is None else [float(subgoal[0]), float(subgoal[1])],
            "goal": None if self.cfg.goal is None else list(self.cfg.goal),
            "mode": self.cfg.mode,
            "threshold": self.cfg.threshold,
            "terrain": str(self.terrain_path),
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        self.written.append(d)


def run_episode(cfg: RunConfig, terrain: Optional[TerrainGrid] = None, out_dir=None,
                check_invariants: bool = True, observer=None) -> EpisodeResult:
    """Run one episode to termination.

    With ``out_dir`` set, snapshots are written under ``out_dir/snapshots``;
    metrics and trajectory files are written by :func:`write_outputs`.
    ``observer(t, conf, state, model)`` is called once per iteration, after
    navigation, with the free-space model the robot moved in.
    """
    if terrain is None:
        try:
            terrain = load_terrain(cfg.terrain_path)
        except FileNotFoundError:
            raise ConfigError(f"terrain file not found: {cfg.terrain_path}") from None
    grid = terrain.grid
    res = grid.resolution
    if cfg.goal is not None and not grid.contains(cfg.goal):
        raise ConfigError(f"goal {cfg.goal} outside terrain extent {grid.extent}")
    pcfg = PlannerConfig(goal=cfg.goal, top_n=cfg.top_n, mode=cfg.mode)
    rng = np.random.default_rng(cfg.seed)
    gp, safe, conf, _sites = bootstrap(cfg, terrain, rng)
    centers = grid.centers()
    grid_post = GridPosterior(gp, centers)
    post = grid_post.posterior()
    snap = _Snapshotter(out_dir, grid, cfg, cfg.terrain_path)

    robot = navigator.RobotState(np.array(cfg.start, dtype=float), cfg.max_step * res)
    traj = [(0, float(robot.position[0]), float(robot.position[1]), -1)]
    unsafe_truth = terrain.values < cfg.threshold
    counters = dict(safety=0, containment=0, nesting=0, mono=0, frontier=0, meas=0, stalls=0)

    def check_point(p):
        if unsafe_truth.ravel()[grid.cell_of(p)]:
            counters["safety"] += 1

    check_point(robot.position)
    rows, decisions, safe_hist = [], [], []
    model = None
    model_size = -1
    segs_model = None
    blacklist = set()
    status = Status.RUNNING
    tick_total = 0
    t = 0
    last_lfs = None
    subgoal = None
    while True:
        t += 1
        new_conf = regions.update_confidence(conf, post.means, post.stds, cfg.beta)
        if check_invariants:
            counters["nesting"] += int(np.count_nonzero(
                (new_conf.lower < conf.lower) | (new_conf.upper > conf.upper)))
        conf = new_conf
        state, stalled_regions = regions.update_regions(safe, conf, cfg.lipschitz, cfg.threshold, grid)
        if check_invariants:
            counters["mono"] += int(np.count_nonzero(safe & ~state.safe))
            counters["frontier"] += int(np.count_nonzero(state.frontier & ~state.safe))
        safe = state.safe
        n_safe = int(safe.sum())
        safe_hist.append(n_safe)

        status = planner.check_termination(robot.position, pcfg, safe, state.frontier,
                                           t - 1, cfg.max_iterations, grid)
        row = dict(t=t, status=status.value, reason="", robot_x=float(robot.position[0]),
                   robot_y=float(robot.position[1]), safe_cells=n_safe,
                   frontier_cells=int(state.frontier.sum()),
                   mean_width=float(np.mean(conf.width)), ticks=0, stalled=0,
                   inconsistent_cells=conf.inconsistent, subgoal_cell=None,
                   subgoal_x=None, subgoal_y=None, measurement=None)
        if status is Status.RUNNING:
            # a cell whose posterior contradicts its interval keeps the old
            # interval, so measuring it again cannot tighten anything
            exclude = set(blacklist)
            if conf.conflict is not None:
                exclude.update(np.flatnonzero(conf.conflict.ravel() & state.frontier.ravel()).tolist())
            decision = planner.select(state.frontier, conf, pcfg, safe, grid, exclude=exclude)
            blacklist = set()
            decisions.append(planner.decision_log_line(t, pcfg, decision))
            row["reason"] = decision.reason.value
            if decision.reason is Reason.EXPLORATION_COMPLETE:
                status = Status.FRONTIER_EXHAUSTED
                row["status"] = status.value
        if status is not Status.RUNNING:
            row["safety_violations"] = counters["safety"]
            rows.append(row)
            if model is None:
                model = _build(safe, grid, cfg)
            snap(t, conf, state, model, robot.position, last_lfs, subgoal)
            if observer is not None:
                observer(t, conf, state, model)
            break

        if model is None or n_safe != model_size:
            model = _build(safe, grid, cfg, model)
            model_size = n_safe
        subgoal = decision.target
        row.update(subgoal_x=float(subgoal[0]), subgoal_y=float(subgoal[1]), subgoal_cell=decision.cell)

        def on_tick(k, rb, lfs):
            nonlocal tick_total, last_lfs
            tick_total += 1
            last_lfs = lfs
            traj.append((tick_total, float(rb.position[0]), float(rb.position[1]), t))
            check_point(rb.position)
            if check_invariants and not model.contains(rb.position):
                counters["containment"] += 1

        nav = navigator.navigate(robot, subgoal, model, cfg.sensing_radius * res,
                                 cfg.arrival_tol * res, cfg.stall_window, cfg.max_ticks,
                                 on_tick=on_tick)
        if nav.stalled:
            # the projection controller is only locally convergent; retry once
            # along a routed detour before giving up on this subgoal
            route = navigator.plan_route(nav.robot.position, subgoal, model, grid, _ROUTE_CLEARANCE * res)
            if route is not None:
                base = nav.ticks
                detour = navigator.navigate_route(
                    nav.robot, route, model, cfg.sensing_radius * res, cfg.arrival_tol * res,
                    cfg.stall_window, cfg.max_ticks - base,
                    on_tick=lambda k, rb, lfs: on_tick(base + k, rb, lfs))
                nav = navigator.NavResult(detour.robot, nav.path + detour.path, detour.arrived,
                                          detour.stalled, base + detour.ticks)
        robot = nav.robot
        row["ticks"] = nav.ticks
        row["robot_x"], row["robot_y"] = float(robot.position[0]), float(robot.position[1])
        here_safe = bool(safe.ravel()[grid.cell_of(robot.position)])
        if nav.stalled:
            counters["stalls"] += 1
            row["stalled"] = 1
            if decision.cell is not None:
                blacklist = {decision.cell}
            log.info("t=%d: navigation stalled toward cell %s", t, decision.cell)
        if not nav.stalled or (cfg.measure_on_stall and here_safe):
            # a stalled robot still stands on safe ground next to the frontier
            # it could not reach; its reading there tightens that neighbourhood
            if not here_safe:
                counters["meas"] += 1
            y = measure(terrain, robot.position, cfg.noise_sd, rng)
            gp.add_observation(robot.position, y)
            post = grid_post.posterior()
            row["measurement"] = y
        row["safety_violations"] = counters["safety"]
        rows.append(row)
        if cfg.snapshot_every > 0 and t % cfg.snapshot_every == 0:
            snap(t, conf, state, model, robot.position, last_lfs, subgoal)
        if observer is not None:
            observer(t, conf, state, model)

    return EpisodeResult(
        config=cfg, status=status, iterations=t - 1, rows=rows, trajectory=traj,
        decisions=decisions, safety_violations=counters["safety"],
        containment_violations=counters["containment"], nesting_violations=counters["nesting"],
        monotonicity_violations=counters["mono"], frontier_violations=counters["frontier"],
        measurement_violations=counters["meas"], stalls=counters["stalls"],
        safe_fraction=float(safe.sum()) / grid.size, safe_history=safe_hist,
        snapshots=snap.written)


def _build(safe, grid, cfg, previous=None):
    res = grid.resolution
    return geometry.build_free_space(safe, grid, cfg.cluster_radius * res, cfg.shape_param * res,
                                     cfg.margin * res, cfg.hull_buffer * res, previous,
                                     cfg.clip_to_cells)


def write_outputs(result: EpisodeResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.rows))
    (out / "trajectory.csv").write_text(trajectory_csv(result.trajectory))
    (out / "decisions.log").write_text("\n".join(result.decisions) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    (out / "config.ini").write_text(result.config.to_ini())
