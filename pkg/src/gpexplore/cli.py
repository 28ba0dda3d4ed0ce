"""``gpexplore`` command line: run one trial, run a sweep, export a series.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
Summaries go to stdout as ``key=value`` pairs and never include timings, so
output for fixed flags is byte-for-byte reproducible.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .grid import GLOBAL
from .harness import (
    SERIES,
    ConfigError,
    ExperimentConfig,
    RecordLoadError,
    TrialError,
    export_series,
    load_record,
    load_sweep,
    parse_horizon,
    persist,
    run_sweep,
    run_trial,
    summarize_records,
)
from .policies import POLICIES, SCIENCE_BLIND, GpSchedule, PolicyConfig

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
RUN_FILES = ("record.json", "path.csv", "rms.csv", "variance.csv")


def _fmt(v) -> str:
    if v is None:
        return "na"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpexplore", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a single trial")
    r.add_argument("--surface", required=True,
                   help="parabola, townsend, crater or a path to an x1,x2,y CSV")
    r.add_argument("--policy", required=True, choices=POLICIES)
    r.add_argument("--horizon", required=True,
                   help=f"waypoint spacing (science-blind) or prediction horizon: integer or {GLOBAL}")
    r.add_argument("--noise", type=float, default=0.0, help="measurement noise variance")
    r.add_argument("--seed", type=int, default=0, help="base seed; the trial is replicate 0")
    r.add_argument("--n0", type=int, help="random-walk initialisation length (gpal only)")
    r.add_argument("--n-max", type=int, help="stop after this many distinct cells")
    r.add_argument("--variance-threshold", type=float,
                   help="stop once the global max variance falls to this value (gpal only)")
    r.add_argument("--iterations", type=int, help="optimizer iterations per training")
    r.add_argument("--out", help="directory for record.json, path.csv, rms.csv, variance.csv")
    r.set_defaults(handler=cmd_run, subparser=r)

    s = sub.add_parser("sweep", help="run every trial in a YAML sweep file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(handler=cmd_sweep, subparser=s)

    e = sub.add_parser("export", help="write one figure series from a trial record")
    e.add_argument("--record", required=True)
    e.add_argument("--series", required=True, choices=SERIES)
    e.add_argument("--out", required=True)
    e.set_defaults(handler=cmd_export, subparser=e)
    return p


def _run_config(args, parser) -> ExperimentConfig:
    if args.policy in SCIENCE_BLIND:
        for flag, value in (("--n0", args.n0), ("--variance-threshold", args.variance_threshold)):
            if value is not None:
                parser.error(f"{flag} only applies to the gpal policy")
    try:
        horizon = parse_horizon(args.horizon)
        gp = GpSchedule() if args.iterations is None else GpSchedule(iterations=args.iterations)
        kw = {"n0": args.n0} if args.n0 is not None else {}
        policy = PolicyConfig(kind=args.policy, horizon=horizon, n_max=args.n_max,
                              variance_threshold=args.variance_threshold, gp=gp, **kw)
        return ExperimentConfig(surface=args.surface, policy=policy, noise=args.noise,
                                base_seed=args.seed)
    except ValueError as exc:
        parser.error(str(exc))


def cmd_run(args, parser) -> int:
    cfg = _run_config(args, parser)
    try:
        rec = run_trial(cfg, 0)
    except TrialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "record.json"), "w") as fh:
            fh.write(rec.to_json())
        for which in SERIES:
            with open(os.path.join(args.out, f"{which}.csv"), "w", newline="") as fh:
                fh.write(export_series(rec, which))
    c = rec.convergence
    final = rec.log.records[-1].global_rms if rec.log.records else None
    pairs = [
        ("converged", c.converged),
        ("samples", c.samples_at_convergence),
        ("distance", c.distance_at_convergence),
        ("final_global_rms", final),
        ("unique", len(set(map(tuple, rec.log.visited)))),
        ("events", len(rec.log.visited)),
        ("min_position_error", rec.min_id.position_error if rec.min_id else None),
        ("stop", rec.log.stop_reason),
        ("seed", rec.seed),
    ]
    print(" ".join(f"{k}={_fmt(v)}" for k, v in pairs))
    return EXIT_OK


def cmd_sweep(args, parser) -> int:
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        configs = load_sweep(args.config)
    except ConfigError as exc:
        parser.error(str(exc))
    result = run_sweep(configs, workers=args.workers)
    persist(result.records, args.out, result.failures)
    rows = summarize_records(result.records)
    for s, m in zip(rows["samples"], rows["rms"]):
        print(" ".join(f"{k}={_fmt(s[k])}" for k in
                       ("surface", "noise", "policy", "horizon", "trials", "converged"))
              + f" median_samples={_fmt(s['median'])} median_rms={_fmt(m['median'])}")
    print(f"records={len(result.records)} failures={len(result.failures)}")
    for f in result.failures:
        print(f"failed: {f.label} replicate {f.replicate}: {f.error}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def cmd_export(args, parser) -> int:
    try:
        rec = load_record(args.record)
    except (OSError, RecordLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        fh.write(export_series(rec, args.series))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, args.subparser)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
