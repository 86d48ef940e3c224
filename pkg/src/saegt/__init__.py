"""Safe exploration of gridded terrain with Gaussian-process traversability maps."""

from importlib import resources

from .config import RunConfig, load_config, parse_config
from .errors import (ConfigError, ContainmentViolation, GeometryError, InvalidArgument,
                     NumericalError, OutOfBounds, SaegtError, TerrainParseError)
from .gp_map import GridPosterior, Hyperparams, TraversabilityGP
from .grid import Grid, read_grid, write_grid
from .planner import Status
from .simulator import EpisodeResult, run_episode, write_outputs
from .terrain import TerrainGrid, load_terrain, save_terrain

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContainmentViolation", "EpisodeResult", "GeometryError", "Grid",
    "GridPosterior", "Hyperparams", "InvalidArgument", "NumericalError", "OutOfBounds",
    "RunConfig", "SaegtError", "Status", "TerrainGrid", "TerrainParseError",
    "TraversabilityGP", "load_config", "load_terrain", "parse_config", "read_grid",
    "run_episode", "save_terrain", "scenario_path", "write_grid", "write_outputs",
]


def scenario_path(name: str):
    """Path of a shipped scenario file, e.g. ``scenario_path("band_small.ini")``."""
    return resources.files(__package__) / "scenarios" / name
