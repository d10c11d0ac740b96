"""Command-line entry point: ``uavlpm <subcommand> ...``.

Exit codes: 0 ok, 2 configuration or input error, 3 the run completed but a
runtime fallback was triggered (details are logged to stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import lpm as lpm_mod
from . import sim
from .citymap import load_citymap
from .exceptions import ConfigError, InvalidInputError, LpmFormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FALLBACK = 3


def _read_bs(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}", "bs")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", str(path)) from None
    if isinstance(d, list):
        d = {"position": d}
    try:
        pos = np.asarray(d["position"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise ConfigError("position must be a numeric 3-vector", "bs.position") from None
    if pos.shape != (3,) or not np.all(np.isfinite(pos)):
        raise ConfigError("position must be a finite 3-vector", "bs.position")
    return pos, d


def _atomic_save(lpm, path):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        lpm_mod.save(lpm, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _load_lpm(path):
    if not Path(path).exists():
        raise ConfigError(f"file not found: {path}", "lpm")
    return lpm_mod.load(path)


def _nan_to_null(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_null(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_null(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _dump(obj, out):
    text = json.dumps(_nan_to_null(obj), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_build_lpm(args):
    city = load_citymap(args.map)
    pos, d = _read_bs(args.bs)
    sigma = args.height_sigma if args.height_sigma is not None else d.get(
        "height_sigma", lpm_mod.DEFAULT_HEIGHT_SIGMA)
    strength = args.prior_strength if args.prior_strength is not None else d.get(
        "prior_strength", lpm_mod.DEFAULT_PRIOR_STRENGTH)
    lpm = lpm_mod.build_prior(city, pos, sigma, strength)
    _atomic_save(lpm, args.output)
    return EXIT_OK


def cmd_refine_lpm(args):
    lpm = _load_lpm(args.lpm)
    if not Path(args.measurements).exists():
        raise ConfigError(f"file not found: {args.measurements}", "measurements")
    meas = lpm_mod.read_measurements_csv(args.measurements)
    refined = lpm_mod.update_with_measurements(lpm, meas)
    _atomic_save(refined, args.output or args.lpm)
    return EXIT_OK


def cmd_export_lpm_csv(args):
    lpm = _load_lpm(args.lpm)
    lpm_mod.export_csv(lpm, args.output)
    return EXIT_OK


def cmd_simulate(args):
    scenario = sim.load_scenario(args.scenario)
    out = sim.simulate(scenario, args.seed)
    sim.write_records_csv(out.records, args.output)
    return EXIT_FALLBACK if out.fallbacks else EXIT_OK


def cmd_batch(args):
    scenario = sim.load_scenario(args.scenario)
    if args.runs < 1:
        raise ConfigError("must be >= 1", "runs")
    per_run, _ = sim.run_batch(scenario, args.runs, args.seed)
    summary = {"runs": args.runs, "seed": args.seed if args.seed is not None else scenario.seed,
               "metrics": sim.summarize(per_run),
               "fallback_runs": sum(1 for m in per_run if m["fallbacks"])}
    _dump(summary, args.output)
    return EXIT_FALLBACK if summary["fallback_runs"] else EXIT_OK


def cmd_metrics(args):
    if not Path(args.records).exists():
        raise ConfigError(f"file not found: {args.records}", "records")
    records = sim.read_records_csv(args.records)
    if not records:
        raise ConfigError("no records", str(args.records))
    _dump(sim.compute_metrics(records, args.r_min), args.output)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="uavlpm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log fallbacks and progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-lpm", help="prior LoS probability map from a building map")
    s.add_argument("map", help="city map JSON")
    s.add_argument("bs", help='base-station JSON, e.g. {"position": [0, 0, 25]}')
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--height-sigma", type=float)
    s.add_argument("--prior-strength", type=float)
    s.set_defaults(func=cmd_build_lpm)

    s = sub.add_parser("refine-lpm", help="add x,y,z,los observations to a map")
    s.add_argument("lpm")
    s.add_argument("measurements")
    s.add_argument("-o", "--output", help="defaults to rewriting the input map")
    s.set_defaults(func=cmd_refine_lpm)

    s = sub.add_parser("export-lpm-csv", help="per-cell LoS probabilities as CSV")
    s.add_argument("lpm")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_export_lpm_csv)

    s = sub.add_parser("simulate", help="one closed-loop run to records.csv")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("batch", help="Monte-Carlo runs and metric summary")
    s.add_argument("scenario")
    s.add_argument("--runs", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", help="summary JSON (stdout if omitted)")
    s.set_defaults(func=cmd_batch)

    s = sub.add_parser("metrics", help="metrics of a records.csv")
    s.add_argument("records")
    s.add_argument("--r-min", type=float, default=0.1)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LpmFormatError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
