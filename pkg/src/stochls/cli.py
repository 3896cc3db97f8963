"""Command-line entry points.

    stochls run <config.json>        multi-seed optimization experiment
    stochls rrprocess <config.json>  stopped-process grid
    stochls lemmas                   randomized lemma checks
    stochls report <dir>             re-render rate fits from a summary.csv

Common flags: --out DIR, --workers N (or the STOCHLS_WORKERS environment
variable), --seeds s1 s2 ..., --exact-diagnostics {on,off}.  Exit codes:
0 success, 2 config violation, 3 runtime abort or failed check.
"""

from __future__ import annotations

import argparse
import os
import sys

from .harness import lemma_suite, render_report, run_experiment


def _workers(args) -> int | None:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("STOCHLS_WORKERS")
    return int(env) if env else None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stochls", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an optimization experiment config")
    p_run.add_argument("config")
    p_rr = sub.add_parser("rrprocess", help="run a stopped-process grid config")
    p_rr.add_argument("config")
    for p in (p_run, p_rr):
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--seeds", type=int, nargs="+", default=None)
    p_run.add_argument("--exact-diagnostics", choices=("on", "off"), default=None)

    p_lem = sub.add_parser("lemmas", help="run the lemma check suite")
    p_lem.add_argument("--instances", type=int, default=1000)
    p_lem.add_argument("--seed", type=int, default=20240)

    p_rep = sub.add_parser("report", help="re-render reports from an output directory")
    p_rep.add_argument("dir")

    args = parser.parse_args(argv)
    if args.command in ("run", "rrprocess"):
        exact = None
        if getattr(args, "exact_diagnostics", None) is not None:
            exact = args.exact_diagnostics == "on"
        return run_experiment(
            args.config,
            out_dir=args.out,
            workers=_workers(args),
            seeds=getattr(args, "seeds", None),
            exact_diagnostics=exact,
        )
    if args.command == "lemmas":
        report = lemma_suite(instances=args.instances, seed=args.seed)
        print(report.describe())
        return 0 if report.passed else 3
    if args.command == "report":
        return render_report(args.dir)
    return 2


if __name__ == "__main__":
    sys.exit(main())
