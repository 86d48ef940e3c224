import csv
import io
import json

import numpy as np
import pytest

from saegt import scenario_path
from saegt.config import RunConfig, load_config
from saegt.errors import ConfigError, OutOfBounds
from saegt.planner import Status
from saegt.regions import init_confidence
from saegt.simulator import (METRICS_COLUMNS, TRAJECTORY_COLUMNS, bootstrap, measure, run_episode,
                             write_outputs)
from saegt.terrain import load_terrain, ramp, uniform


def _cfg(**kw):
    base = dict(terrain="unused", start_x=5.5, start_y=5.5, start_radius=2.0, noise_sd=10.0,
                signal_variance=1e6, length_scale=3.0, noise_variance=100.0, prior_mean=1500.0,
                beta=3.0, lipschitz=100.0, threshold=1000.0, goal_x=8.5, goal_y=5.5,
                max_iterations=50)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def small():
    cfg = load_config(scenario_path("band_small.ini"))
    return cfg, load_terrain(cfg.terrain_path)


# --- measurement -----------------------------------------------------------

def test_noise_free_measurement_at_center():
    t = ramp(5, 4, 1.0, base=1000.0, slope=3.0)
    assert measure(t, (2.5, 1.5), 0.0, np.random.default_rng(0)) == t.values[1, 2]


def test_measurement_sequence_is_seeded():
    t = uniform(4, 4)
    a = [measure(t, (1, 1), 5.0, r) for r in [np.random.default_rng(3)] for _ in range(5)]
    b = [measure(t, (1, 1), 5.0, r) for r in [np.random.default_rng(3)] for _ in range(5)]
    assert a == b


def test_measurement_noise_mean():
    t = ramp(6, 6, 1.0, base=1000.0, slope=2.0)
    rng = np.random.default_rng(1)
    x = (2.3, 3.7)
    ys = np.array([measure(t, x, 10.0, rng) for _ in range(100_000)])
    assert abs(ys.mean() - t.interpolate(x)) <= 4 * 10.0 / np.sqrt(1e5)


def test_measurement_outside_extent():
    with pytest.raises(OutOfBounds):
        measure(uniform(3, 3), (3.5, 1.0), 1.0, np.random.default_rng(0))


# --- bootstrap -------------------------------------------------------------

def test_bootstrap_single_noise_free_sample_interpolates():
    t = ramp(12, 12, 1.0, base=1200.0, slope=5.0)
    cfg = _cfg(bootstrap_samples=1, start_radius=0.0, noise_sd=0.0, noise_variance=0.0, prior_mean=0.0)
    gp, s0, conf, sites = bootstrap(cfg, t, np.random.default_rng(0))
    np.testing.assert_array_equal(sites, [[5.5, 5.5]])
    post = gp.posterior([(5.5, 5.5)])
    # exact up to the 1e-8 relative Cholesky jitter
    assert post.means[0] == pytest.approx(t.values[5, 5], rel=2e-8)


def test_bootstrap_sites_inside_disk_and_confidence_matches():
    t = uniform(12, 12)
    cfg = _cfg(bootstrap_samples=200)
    gp, s0, conf, sites = bootstrap(cfg, t, np.random.default_rng(4))
    assert len(gp) == 200
    assert np.all(np.hypot(sites[:, 0] - 5.5, sites[:, 1] - 5.5) <= 2.0)
    ref = init_confidence(t.grid, s0, cfg.threshold)
    np.testing.assert_array_equal(conf.lower, ref.lower)
    np.testing.assert_array_equal(conf.upper, ref.upper)


def test_bootstrap_disk_must_fit():
    with pytest.raises(ConfigError):
        bootstrap(_cfg(start_x=0.5), uniform(12, 12), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        bootstrap(_cfg(start_x=50.0), uniform(12, 12), np.random.default_rng(0))


# --- episodes --------------------------------------------------------------

def test_unobstructed_goal_is_reached_quickly():
    r = run_episode(_cfg(), uniform(12, 12))
    assert r.status is Status.GOAL_REACHED
    assert r.iterations <= 5
    assert r.safety_violations == 0


def test_band_episode_is_safe_and_consistent(small):
    cfg, terrain = small
    r = run_episode(cfg, terrain)
    assert r.status is Status.GOAL_REACHED
    assert r.safety_violations == 0
    assert r.containment_violations == 0
    assert r.nesting_violations == r.monotonicity_violations == r.frontier_violations == 0
    assert r.measurement_violations == 0
    assert all(a <= b for a, b in zip(r.safe_history, r.safe_history[1:]))
    unsafe = terrain.values < cfg.threshold
    for _, x, y, _ in r.trajectory:
        assert not unsafe.ravel()[terrain.grid.cell_of((x, y))]


def test_goal_free_coverage_is_monotone():
    cfg = _cfg(mode="goal-free", goal_x=None, goal_y=None, max_iterations=200)
    r = run_episode(cfg, uniform(14, 12))
    assert r.status is Status.FRONTIER_EXHAUSTED
    assert r.safe_fraction == 1.0
    assert all(a <= b for a, b in zip(r.safe_history, r.safe_history[1:]))


def test_max_iterations_status():
    r = run_episode(_cfg(max_iterations=1, goal_x=11.5, goal_y=11.5, start_radius=1.0), uniform(30, 30))
    assert r.status is Status.MAX_ITERATIONS
    assert r.iterations == 1


def test_determinism_including_snapshots(small, tmp_path):
    cfg, terrain = small
    a = run_episode(cfg, terrain, out_dir=tmp_path / "a")
    b = run_episode(cfg, terrain, out_dir=tmp_path / "b")
    write_outputs(a, tmp_path / "a")
    write_outputs(b, tmp_path / "b")
    for name in ("metrics.csv", "trajectory.csv", "decisions.log", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    snaps = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a" / "snapshots").rglob("*")
                   if p.is_file())
    assert snaps
    for rel in snaps:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_outputs_have_documented_schema(small, tmp_path):
    cfg, terrain = small
    r = run_episode(cfg.replace(max_iterations=12), terrain, out_dir=tmp_path)
    write_outputs(r, tmp_path)
    rows = list(csv.reader(io.StringIO((tmp_path / "metrics.csv").read_text())))
    assert rows[0] == METRICS_COLUMNS
    assert len(rows) == r.iterations + 1 + 1  # header, one row per iteration, final row
    traj = list(csv.reader(io.StringIO((tmp_path / "trajectory.csv").read_text())))
    assert traj[0] == TRAJECTORY_COLUMNS
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == r.status.value and summary["safety_violations"] == 0
    # snapshots every 10 iterations plus the final one
    names = sorted(p.name for p in (tmp_path / "snapshots").iterdir())
    assert names == ["iter_000010", f"iter_{r.iterations + 1:06d}"]
    assert (tmp_path / "config.ini").read_text() == cfg.replace(max_iterations=12).to_ini()


def test_missing_terrain_names_path(tmp_path):
    cfg = _cfg(terrain=str(tmp_path / "nope.grid"))
    with pytest.raises(ConfigError, match="nope.grid"):
        run_episode(cfg)


def test_goal_outside_terrain():
    with pytest.raises(ConfigError):
        run_episode(_cfg(goal_x=40.0), uniform(12, 12))


def test_observer_sees_every_iteration():
    seen = []
    r = run_episode(_cfg(max_iterations=4, goal_x=25.5, goal_y=5.5), uniform(30, 12),
                    observer=lambda t, conf, state, model: seen.append((t, int(state.safe.sum()))))
    assert [t for t, _ in seen] == list(range(1, r.iterations + 2))
    assert [n for _, n in seen] == r.safe_history
