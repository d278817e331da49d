"""Command line entry point: ``cdfsched run <spec>`` and ``cdfsched validate``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .experiments import SpecError, builtin_names, load_spec, run_experiment, write_outputs

QUICK_SLOTS = 100_000


def _run(args) -> int:
    try:
        spec = load_spec(args.spec)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.slots is not None:
            changes["slots"] = args.slots
        elif args.quick:
            changes["slots"] = QUICK_SLOTS
        if args.replicas is not None:
            changes["replicas"] = args.replicas
        if args.no_mc:
            changes["monte_carlo"] = False
        spec = dataclasses.replace(spec, **changes)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(spec, workers=args.workers)
    csv_path, man_path = write_outputs(result, args.out)
    status = "complete" if result.complete else f"incomplete ({len(result.failures)} failures)"
    print(f"{spec.name}: {len(result.rows)} rows, {status}, {result.elapsed:.1f}s")
    print(f"  {csv_path}\n  {man_path}")
    return 0 if result.complete else 1


def _validate(args) -> int:
    from .validation import run_suite

    results = run_suite(quick=args.quick, only=args.only)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.criterion:>2} {r.name:<{width}}  {r.elapsed:7.1f}s  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _list(_args) -> int:
    for name in builtin_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdfsched", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a built-in experiment, a TOML spec or a manifest")
    r.add_argument("spec", help="built-in name, path to a .toml spec, or a .manifest.json to re-run")
    r.add_argument("--seed", type=int, help="override the spec seed")
    r.add_argument("--slots", type=int, help="total Monte Carlo slots per sweep point")
    r.add_argument("--replicas", type=int, help="replicas per sweep point")
    r.add_argument("--out", default="results", help="output directory (default: results)")
    r.add_argument("--quick", action="store_true", help=f"use {QUICK_SLOTS} slots per point")
    r.add_argument("--workers", type=int, default=1, help="threads used for sweep points")
    r.add_argument("--no-mc", action="store_true", help="analytical columns only")
    r.set_defaults(func=_run)

    v = sub.add_parser("validate", help="run the acceptance checks")
    v.add_argument("--quick", action="store_true", help="reduced budgets with widened tolerances")
    v.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    v.set_defaults(func=_validate)

    ls = sub.add_parser("list", help="list built-in experiments")
    ls.set_defaults(func=_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
