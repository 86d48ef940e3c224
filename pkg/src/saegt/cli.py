"""Command-line front end.

Exit codes:

==  ===================================================================
0   success: goal reached (``run``), frontier exhausted (``explore``),
    files match (``verify``), at least one image written (``render``)
1   runtime error, or ``verify`` found differences
2   usage or configuration error (bad key, unreadable config/terrain)
3   frontier exhausted before the goal (``run``)
4   iteration budget spent
==  ===================================================================

With ``--seeds A:B`` the worst code over all seeds is returned.  The output
directory defaults to ``$SAEGT_OUT_DIR`` and then ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import render, terrain as terrain_mod
from .config import load_config
from .errors import ConfigError, SaegtError
from .planner import Status
from .simulator import INT_COLUMNS, TEXT_COLUMNS, run_episode, write_outputs

log = logging.getLogger("saegt")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FRONTIER = 3
EXIT_BUDGET = 4

FLOAT_TOL = 1e-9


def _out_dir(arg):
    if arg:
        return Path(arg)
    return Path(os.environ.get("SAEGT_OUT_DIR") or "out")


def _seed_range(text):
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            seeds = list(range(int(a), int(b)))
        else:
            seeds = [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or A:B, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return seeds


def _status_code(status: Status, mode: str) -> int:
    if status is Status.GOAL_REACHED:
        return EXIT_OK
    if status is Status.FRONTIER_EXHAUSTED:
        return EXIT_OK if mode == "goal-free" else EXIT_FRONTIER
    return EXIT_BUDGET


def _report(result, out, terrain):
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    render.plot_metrics(result.rows, fig_dir / "metrics.png")
    if result.snapshots:
        render.render_directory(out, fig_dir, terrain, result.config.threshold)


def _episode(cfg, out, report):
    try:
        terrain = terrain_mod.load_terrain(cfg.terrain_path)
    except FileNotFoundError:
        raise ConfigError(f"terrain file not found: {cfg.terrain_path}") from None
    result = run_episode(cfg, terrain, out_dir=out)
    write_outputs(result, out)
    if report:
        _report(result, out, terrain)
    return result


def _print_summary(result, out):
    s = result.summary()
    line = " ".join(f"{k}={s[k]}" for k in ("seed", "status", "iterations", "safety_violations"))
    if result.config.mode == "goal-free":
        line += f" safe_fraction={s['safe_fraction']:.6f}"
    print(f"{line} out={out}")
    if result.safety_violations:
        print(f"warning: seed {result.config.seed}: {result.safety_violations} trajectory points "
              f"on cells below the threshold", file=sys.stderr)


def cmd_run(args, goal_free=False) -> int:
    overrides = list(args.override)
    if goal_free:
        overrides.append("episode.mode=goal-free")
    base = load_config(args.config, overrides)
    out = _out_dir(args.out)
    seeds = args.seeds or [base.seed]
    if len(seeds) == 1:
        jobs = [(base.replace(seed=seeds[0]), out)]
    else:
        jobs = [(base.replace(seed=s), out / f"seed_{s:04d}") for s in seeds]

    def one(job):
        cfg, d = job
        try:
            return _episode(cfg, d, args.report), None
        except SaegtError as exc:
            return None, exc

    workers = max(1, min(args.workers, len(jobs)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(one, jobs))
    code = EXIT_OK
    for (cfg, d), (result, exc) in zip(jobs, outcomes):
        if exc is not None:
            print(f"error: seed {cfg.seed}: {exc}", file=sys.stderr)
            code = max(code, EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR)
            continue
        _print_summary(result, d)
        code = max(code, _status_code(result.status, cfg.mode))
    return code


def _param_value(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def cmd_gen_terrain(args) -> int:
    gen = terrain_mod.GENERATORS[args.generator]
    params = {}
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        params[k.strip().replace("-", "_")] = _param_value(v.strip())
    if args.seed is not None:
        params["seed"] = args.seed
    if args.lipschitz is not None:
        params["lipschitz"] = args.lipschitz
    try:
        terr = gen(args.width, args.height, args.resolution, **params)
    except TypeError as exc:
        raise ConfigError(f"{args.generator}: {exc}") from None
    meta = {"generator": args.generator, "params": params}
    terrain_mod.save_terrain(terr, args.output, meta)
    print(f"wrote {args.output} ({args.width}x{args.height}, lipschitz={terr.lipschitz:.6g})")
    return EXIT_OK


def cmd_render(args) -> int:
    terr = terrain_mod.load_terrain(args.terrain) if args.terrain else None
    try:
        written, failed = render.render_directory(args.snapshots, _out_dir(args.out), terr,
                                                  args.threshold, progression=not args.no_progression)
    except FileNotFoundError as exc:
        raise ConfigError(f"snapshot directory not found: {exc.filename}") from None
    for path, digest in written.items():
        print(f"{path},{digest}")
    if failed:
        print(f"skipped {len(failed)} malformed snapshot(s)", file=sys.stderr)
    return EXIT_OK if written else EXIT_ERROR


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ConfigError(f"{path} is empty")
    return rows[0], rows[1:]


def _same(col, a, b, tol):
    if a == b:
        return True
    if col in TEXT_COLUMNS or col in INT_COLUMNS or a == "" or b == "":
        return False
    try:
        x, y = float(a), float(b)
    except ValueError:
        return False
    if math.isnan(x) and math.isnan(y):
        return True
    return abs(x - y) <= tol


def compare_metrics(actual_path, golden_path, tol=FLOAT_TOL):
    """List of human-readable differences (empty when the files agree)."""
    head_a, rows_a = _read_csv(actual_path)
    head_g, rows_g = _read_csv(golden_path)
    if head_a != head_g:
        missing = [c for c in head_g if c not in head_a]
        extra = [c for c in head_a if c not in head_g]
        msg = "schema mismatch:"
        if missing:
            msg += f" missing columns {', '.join(missing)};"
        if extra:
            msg += f" unexpected columns {', '.join(extra)};"
        if not missing and not extra:
            msg += f" column order differs ({', '.join(head_a)})"
        return [msg.rstrip(";")]
    diffs = []
    if len(rows_a) != len(rows_g):
        diffs.append(f"row count {len(rows_a)} != {len(rows_g)}")
    for i, (ra, rg) in enumerate(zip(rows_a, rows_g), start=1):
        for col, a, b in zip(head_g, ra, rg):
            if not _same(col, a, b, tol):
                diffs.append(f"row {i} column {col}: {a!r} != {b!r}")
    return diffs


def cmd_verify(args) -> int:
    diffs = compare_metrics(args.metrics, args.golden, args.tol)
    for d in diffs[:50]:
        print(d)
    if len(diffs) > 50:
        print(f"... {len(diffs) - 50} more")
    if diffs:
        return EXIT_ERROR
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saegt", description="Safe exploration over gridded terrain.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("run", "run goal-directed episodes"), ("explore", "run goal-free episodes")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("-o", "--out", help="output directory (default $SAEGT_OUT_DIR or ./out)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--seeds", type=_seed_range, metavar="N|A:B",
                        help="seed or half-open seed range; ranges write seed_NNNN/ subdirectories")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--report", action="store_true",
                        help="render snapshots and a metrics plot into figures/")

    sp = sub.add_parser("gen-terrain", help="write a synthetic terrain file")
    sp.add_argument("generator", choices=sorted(terrain_mod.GENERATORS))
    sp.add_argument("output")
    sp.add_argument("--width", type=int, required=True)
    sp.add_argument("--height", type=int, required=True)
    sp.add_argument("--resolution", type=float, default=1.0)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lipschitz", type=float, help="declared bound; generation fails if exceeded")
    sp.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    sp = sub.add_parser("render", help="render snapshots to PNG")
    sp.add_argument("snapshots", help="run directory, its snapshots/ or one iter_* directory")
    sp.add_argument("-o", "--out", help="image directory (default $SAEGT_OUT_DIR or ./out)")
    sp.add_argument("--terrain", help="terrain file; enables the ground-truth layers")
    sp.add_argument("--threshold", type=float, help="override the threshold stored in the snapshots")
    sp.add_argument("--no-progression", action="store_true")

    sp = sub.add_parser("verify", help="compare metrics.csv against a golden file")
    sp.add_argument("metrics")
    sp.add_argument("golden")
    sp.add_argument("--tol", type=float, default=FLOAT_TOL, help="absolute tolerance for float columns")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "run": cmd_run,
        "explore": lambda a: cmd_run(a, goal_free=True),
        "gen-terrain": cmd_gen_terrain,
        "render": cmd_render,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SaegtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
