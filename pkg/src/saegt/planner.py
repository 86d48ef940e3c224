"""Subgoal selection over the frontier and episode termination.

Ties are always broken by ascending row-major cell index, so selections are a
pure function of the inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .grid import Grid

log = logging.getLogger(__name__)

GOAL_DIRECTED = "goal-directed"
GOAL_FREE = "goal-free"


class Reason(str, Enum):
    FRONTIER_SELECTED = "frontier-selected"
    GOAL_REACHABLE = "goal-reachable-directly"
    EXPLORATION_COMPLETE = "exploration-complete"
    STALLED = "stalled"


class Status(str, Enum):
    RUNNING = "running"
    GOAL_REACHED = "goal-reached"
    FRONTIER_EXHAUSTED = "frontier-exhausted"
    MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class PlannerConfig:
    goal: Optional[tuple] = None
    top_n: int = 10
    mode: str = GOAL_DIRECTED

    def __post_init__(self):
        if self.mode not in (GOAL_DIRECTED, GOAL_FREE):
            raise InvalidArgument(f"unknown planner mode {self.mode!r}")
        if (self.goal is not None) != (self.mode == GOAL_DIRECTED):
            raise InvalidArgument("a goal is required in goal-directed mode and forbidden in goal-free mode")
        if self.top_n < 1:
            raise InvalidArgument("top_n must be >= 1")


@dataclass(frozen=True)
class SubgoalDecision:
    target: Optional[np.ndarray]
    reason: Reason
    candidate_count: int
    cell: Optional[int] = None
    width: float = float("nan")
    goal_distance: float = float("nan")


def _argmax_width(cells, widths):
    # first maximal entry; ``cells`` is already ascending where it matters
    order = np.lexsort((cells, -widths))
    return int(order[0])


def _candidates(frontier, exclude):
    """Frontier cells minus ``exclude``; the exclusion is dropped if it would empty the set."""
    cells = np.flatnonzero(np.asarray(frontier, dtype=bool).ravel())
    if len(exclude):
        kept = cells[~np.isin(cells, np.asarray(list(exclude), dtype=int))]
        if kept.size:
            return kept
    return cells


def select_subgoal(frontier, conf, cfg: PlannerConfig, safe, grid: Grid, exclude=()) -> SubgoalDecision:
    """Goal-biased selection: the n frontier cells nearest the goal, widest interval wins."""
    if cfg.mode != GOAL_DIRECTED:
        raise InvalidArgument("select_subgoal requires goal-directed mode")
    goal = np.asarray(cfg.goal, dtype=float)
    safe = np.asarray(safe, dtype=bool).ravel()
    if grid.contains(goal) and safe[grid.cell_of(goal)]:
        return SubgoalDecision(goal, Reason.GOAL_REACHABLE, 0, grid.cell_of(goal),
                               goal_distance=0.0)
    cells = _candidates(frontier, exclude)
    if cells.size == 0:
        return SubgoalDecision(None, Reason.EXPLORATION_COMPLETE, 0)
    centers = grid.centers()[cells]
    dist = np.hypot(centers[:, 0] - goal[0], centers[:, 1] - goal[1])
    order = np.lexsort((cells, dist))[: cfg.top_n]
    cand = cells[order]
    widths = conf.width.ravel()[cand]
    k = _argmax_width(cand, widths)
    cell = int(cand[k])
    log.debug("goal-directed pick cell %d among %d candidates", cell, len(cand))
    return SubgoalDecision(grid.center(cell), Reason.FRONTIER_SELECTED, len(cand), cell,
                           float(widths[k]), float(dist[order][k]))


def select_explore_target(frontier, conf, grid: Grid, exclude=()) -> SubgoalDecision:
    """Goal-free selection: the widest interval over the whole frontier."""
    cells = _candidates(frontier, exclude)
    if cells.size == 0:
        return SubgoalDecision(None, Reason.EXPLORATION_COMPLETE, 0)
    widths = conf.width.ravel()[cells]
    k = _argmax_width(cells, widths)
    cell = int(cells[k])
    return SubgoalDecision(grid.center(cell), Reason.FRONTIER_SELECTED, len(cells), cell,
                           float(widths[k]))


def select(frontier, conf, cfg: PlannerConfig, safe, grid: Grid, exclude=()) -> SubgoalDecision:
    if cfg.mode == GOAL_DIRECTED:
        return select_subgoal(frontier, conf, cfg, safe, grid, exclude)
    return select_explore_target(frontier, conf, grid, exclude)


def check_termination(robot, cfg: PlannerConfig, safe, frontier, iteration: int,
                      max_iter: int, grid: Grid) -> Status:
    if cfg.mode == GOAL_DIRECTED:
        gap = np.hypot(robot[0] - cfg.goal[0], robot[1] - cfg.goal[1])
        if gap <= grid.resolution:
            return Status.GOAL_REACHED
    if iteration >= max_iter:
        return Status.MAX_ITERATIONS
    if not np.any(frontier):
        goal_safe = False
        if cfg.mode == GOAL_DIRECTED and grid.contains(cfg.goal):
            goal_safe = bool(np.asarray(safe, dtype=bool).ravel()[grid.cell_of(cfg.goal)])
        if not goal_safe:
            return Status.FRONTIER_EXHAUSTED
    return Status.RUNNING


def decision_log_line(iteration: int, cfg: PlannerConfig, d: SubgoalDecision) -> str:
    """``iter mode candidates cell goal_distance width`` as one text line."""
    cell = "-" if d.cell is None else str(d.cell)
    return (f"{iteration} {cfg.mode} {d.candidate_count} {cell} "
            f"{d.goal_distance!r} {d.width!r} {d.reason.value}")
