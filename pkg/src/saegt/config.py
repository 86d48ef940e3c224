"""Run configuration: an INI document with one section per subsystem.

Keys are addressed as ``section.key`` (for overrides) or by the bare key when
it is unique across sections::

    [episode]
    terrain = band.grid
    seed = 0
    ...
    [regions]
    beta = 3
    lipschitz = 120
    threshold = 1000

Lengths under ``[geometry]`` and ``[navigator]`` are given in cells and
scaled by the terrain resolution at run time.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError

REQUIRED = object()


def _opt_float(s):
    s = str(s).strip()
    if s.lower() in ("", "none"):
        return None
    return float(s)


def _flag(s):
    if isinstance(s, bool):
        return s
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _mode(s):
    s = str(s).strip()
    if s not in ("goal-directed", "goal-free"):
        raise ValueError(f"expected goal-directed or goal-free, got {s!r}")
    return s


# (section, key, converter, default); the field name equals the key
SCHEMA = [
    ("episode", "terrain", str, REQUIRED),
    ("episode", "seed", int, 0),
    ("episode", "max_iterations", int, 1000),
    ("episode", "mode", _mode, "goal-directed"),
    ("episode", "start_x", float, REQUIRED),
    ("episode", "start_y", float, REQUIRED),
    ("episode", "start_radius", float, REQUIRED),
    ("episode", "goal_x", _opt_float, None),
    ("episode", "goal_y", _opt_float, None),
    ("episode", "bootstrap_samples", int, 5),
    ("episode", "noise_sd", float, REQUIRED),
    ("episode", "snapshot_every", int, 10),
    ("episode", "measure_on_stall", _flag, True),
    ("gp", "signal_variance", float, REQUIRED),
    ("gp", "length_scale", float, REQUIRED),
    ("gp", "noise_variance", float, REQUIRED),
    ("gp", "jitter", float, 1e-8),
    ("gp", "prior_mean", float, 0.0),
    ("regions", "beta", float, REQUIRED),
    ("regions", "lipschitz", float, REQUIRED),
    ("regions", "threshold", float, REQUIRED),
    ("planner", "top_n", int, 10),
    ("geometry", "cluster_radius", float, 1.5),
    ("geometry", "shape_param", float, 3.0),
    ("geometry", "margin", float, 2.0),
    ("geometry", "hull_buffer", float, 0.5),
    ("geometry", "clip_to_cells", _flag, True),
    ("navigator", "sensing_radius", float, 5.0),
    ("navigator", "max_step", float, 0.5),
    ("navigator", "arrival_tol", float, 0.5),
    ("navigator", "stall_window", int, 50),
    ("navigator", "max_ticks", int, 2000),
]

_BY_KEY = {}
for _sec, _key, _conv, _default in SCHEMA:
    _BY_KEY.setdefault(_key, []).append(_sec)


@dataclass(frozen=True)
class RunConfig:
    terrain: str
    start_x: float
    start_y: float
    start_radius: float
    noise_sd: float
    signal_variance: float
    length_scale: float
    noise_variance: float
    beta: float
    lipschitz: float
    threshold: float
    seed: int = 0
    max_iterations: int = 1000
    mode: str = "goal-directed"
    goal_x: Optional[float] = None
    goal_y: Optional[float] = None
    bootstrap_samples: int = 5
    snapshot_every: int = 10
    measure_on_stall: bool = True
    jitter: float = 1e-8
    prior_mean: float = 0.0
    top_n: int = 10
    cluster_radius: float = 1.5
    shape_param: float = 3.0
    margin: float = 2.0
    hull_buffer: float = 0.5
    clip_to_cells: bool = True
    sensing_radius: float = 5.0
    max_step: float = 0.5
    arrival_tol: float = 0.5
    stall_window: int = 50
    max_ticks: int = 2000
    base_dir: str = dataclasses.field(default=".", compare=False)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v) and f.name != "shape_param":
                raise ConfigError(f"{f.name} must be finite, got {v}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.lipschitz < 0:
            raise ConfigError("lipschitz must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.bootstrap_samples < 1:
            raise ConfigError("bootstrap_samples must be >= 1")
        if self.start_radius < 0:
            raise ConfigError("start_radius must be >= 0")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        has_goal = self.goal_x is not None and self.goal_y is not None
        if (self.goal_x is None) != (self.goal_y is None):
            raise ConfigError("goal_x and goal_y must be given together")
        if self.mode == "goal-directed" and not has_goal:
            raise ConfigError("goal-directed mode needs goal_x and goal_y")

    @property
    def goal(self):
        if self.goal_x is None:
            return None
        return (self.goal_x, self.goal_y)

    @property
    def start(self):
        return (self.start_x, self.start_y)

    @property
    def terrain_path(self) -> Path:
        p = Path(self.terrain)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, key, _conv, _default in SCHEMA:
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, key, _ini_value(getattr(self, key)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _ini_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _resolve_key(name: str):
    if "." in name:
        sec, key = name.split(".", 1)
        if key not in _BY_KEY or sec not in _BY_KEY[key]:
            raise ConfigError(f"unknown config key {name!r}")
        return sec, key
    if name not in _BY_KEY:
        raise ConfigError(f"unknown config key {name!r}")
    if len(_BY_KEY[name]) > 1:
        raise ConfigError(f"ambiguous config key {name!r}; qualify it with a section")
    return _BY_KEY[name][0], name


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    name, value = text.split("=", 1)
    return _resolve_key(name.strip()), value.strip()


def config_from_mapping(values: dict, base_dir=".") -> RunConfig:
    """Build a config from ``{(section, key): text}``."""
    kwargs = {}
    for sec, key, conv, default in SCHEMA:
        if (sec, key) in values:
            raw = values[(sec, key)]
            try:
                kwargs[key] = conv(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {raw!r} ({exc})") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {sec}.{key}")
        else:
            kwargs[key] = default
    return RunConfig(base_dir=str(base_dir), **kwargs)


def parse_config(text: str, overrides=(), base_dir=".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    values = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            values[_resolve_key(f"{sec}.{key}")] = raw
    for ov in overrides:
        k, v = parse_override(ov)
        values[k] = v
    return config_from_mapping(values, base_dir)


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides, base_dir=path.parent)
