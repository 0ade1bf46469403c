"""Command line entry point: ``qotto run | list-scenarios | validate``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .config import SCENARIOS, ConfigError, ScenarioConfig, load_config
from .lindblad import IntegrationError
from .qcore import PositivityError
from .scenarios import battery_charge_rows, compute_point, header, scenario_metadata
from .thermo import BookkeepingError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("qotto")


class JobFailure(RuntimeError):
    def __init__(self, point, cause):
        super().__init__(f"grid point {point} failed: {type(cause).__name__}: {cause}")
        self.point = point
        self.cause = cause


def format_cell(v) -> str:
    """Shortest round-trip decimal for floats; empty cell for NaN/None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _job(args):
    cfg, point = args
    try:
        return compute_point(cfg, point), None
    except Exception as exc:  # reported with the failing grid point by the writer
        return None, exc


def iter_rows(cfg: ScenarioConfig, jobs: int = 1):
    """Rows in grid order; raises :class:`JobFailure` at the first failing point."""
    if cfg.scenario == "battery-charge":
        yield from battery_charge_rows(cfg)
        return
    grid = cfg.grid()
    work = [(cfg, pt) for pt in grid]
    if jobs <= 1 or len(grid) <= 1:
        results = map(_job, work)
        for pt, (row, err) in zip(grid, results):
            if err is not None:
                raise JobFailure(pt, err)
            yield row
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for pt, (row, err) in zip(grid, pool.map(_job, work)):
            if err is not None:
                raise JobFailure(pt, err)
            yield row


def _toml_safe(obj):
    if isinstance(obj, dict):
        return {k: _toml_safe(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_toml_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def run_scenario(cfg: ScenarioConfig, out_dir, jobs: int = 1) -> Path:
    """Write the CSV and its ``.meta.toml`` sidecar; returns the CSV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / Path(cfg.output).name
    cols = header(cfg)
    t0 = time.perf_counter()
    status, failure = "ok", None
    n_rows = 0
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        try:
            for row in iter_rows(cfg, jobs):
                w.writerow([format_cell(row.get(c)) for c in cols])
                fh.flush()
                n_rows += 1
        except JobFailure as exc:
            status, failure = "failed", str(exc)
            raise
        finally:
            meta = {
                "qotto_version": __version__,
                "status": status,
                "rows": n_rows,
                "wall_time_s": time.perf_counter() - t0,
                "config": cfg.resolved(),
                "scenario_info": scenario_metadata(cfg),
                "tolerances": {"ness_distance": cfg.options.get("threshold", 1e-4),
                               "oss_fp_tol": 1e-10, "rk_rtol": 1e-8, "rk_atol": 1e-12},
            }
            if failure:
                meta["failure"] = failure
            with open(csv_path.with_suffix(csv_path.suffix + ".meta.toml"), "wb") as mf:
                tomli_w.dump(_toml_safe(meta), mf)
    return csv_path


def _cmd_list(args) -> int:
    for name, sdef in SCENARIOS.items():
        print(f"{name:26s} [{sdef.kind}, base={sdef.base}] {sdef.description}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config, args.preset)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    n = len(cfg.grid()) if cfg.sweep else 1
    print(f"ok: {cfg.scenario} ({cfg.preset} preset), {n} grid point(s)")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.preset)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        print("invalid config: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        path = run_scenario(cfg, args.out, jobs)
    except JobFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IntegrationError, PositivityError, BookkeepingError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qotto", description="Optically pumped battery and four-level engine runs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario config and write CSV output")
    r.add_argument("config")
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("--preset", choices=("paper", "desk"), default=None, help="override the config preset")
    r.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list-scenarios", help="list known scenarios")
    ls.set_defaults(func=_cmd_list)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("--preset", choices=("paper", "desk"), default=None)
    v.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; those are validation failures here
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
