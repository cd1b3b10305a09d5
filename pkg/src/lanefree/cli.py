"""Command line front-end: solve / certify / sweep."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .scenario import ScenarioFormatError, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanefree",
        description="Minimum-time lane-free intersection crossing planner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one scenario end to end")
    p_solve.add_argument("scenario", help="scenario JSON file")
    p_solve.add_argument("--out", default="out", help="artifact directory")
    p_solve.add_argument("--np", type=int, default=None, dest="n_intervals",
                         help="collocation intervals (default 15)")
    p_solve.add_argument("--degree", type=int, default=None,
                         help="collocation points per interval (default 5)")
    p_solve.add_argument("--scheme", choices=["radau", "legendre"],
                         default=None)
    p_solve.add_argument("--tol", type=float, default=None,
                         help="solver KKT/feasibility tolerance")
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--max-iter", type=int, default=None)

    p_cert = sub.add_parser("certify",
                            help="re-check a stored solution primally")
    p_cert.add_argument("solution", help="solution JSON file")
    p_cert.add_argument("scenario", help="scenario JSON file")

    p_sweep = sub.add_parser("sweep", help="timing sweep over fleet sizes")
    p_sweep.add_argument("template", help="scenario JSON with enough CAVs")
    p_sweep.add_argument("--n", required=True,
                         help="comma-separated fleet sizes, e.g. 1,2,3")
    p_sweep.add_argument("--reps", type=int, default=3)
    p_sweep.add_argument("--out", default="sweep-out")
    p_sweep.add_argument("--np", type=int, default=None, dest="n_intervals")
    p_sweep.add_argument("--degree", type=int, default=None)
    p_sweep.add_argument("--tol", type=float, default=None)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "solve":
        result = harness.run(
            args.scenario, out_dir=args.out, n_intervals=args.n_intervals,
            degree=args.degree, scheme=args.scheme, tol=args.tol,
            seed=args.seed, max_iter=args.max_iter)
        stream = sys.stdout if result.exit_code == 0 else sys.stderr
        print(result.message, file=stream)
        if result.metrics:
            print(f"t_f = {result.metrics['min_crossing_time_s']:.4f} s, "
                  f"avg speed {result.metrics['average_speed_mps']:.2f} m/s, "
                  f"throughput "
                  f"{result.metrics['throughput_veh_per_s']:.3f} veh/s",
                  file=stream)
        return result.exit_code

    if args.command == "certify":
        try:
            sc = load_scenario(args.scenario)
            sol = harness.load_solution(args.solution)
        except json.JSONDecodeError as err:
            print(f"invalid JSON at line {err.lineno} column {err.colno}: "
                  f"{err.msg}", file=sys.stderr)
            return harness.EXIT_SCENARIO_INVALID
        except (ScenarioFormatError, KeyError, OSError, ValueError) as err:
            print(f"invalid input: {err}", file=sys.stderr)
            return harness.EXIT_SCENARIO_INVALID
        cert = harness.certify(sol, sc)
        print(cert.summary())
        return harness.EXIT_OK if cert.passed \
            else harness.EXIT_CERTIFICATION_FAILED

    if args.command == "sweep":
        try:
            n_list = [int(v) for v in args.n.split(",") if v.strip()]
        except ValueError:
            print(f"--n must be comma-separated integers, got {args.n!r}",
                  file=sys.stderr)
            return 2
        summary = harness.sweep(
            args.template, n_list, reps=args.reps, out_dir=args.out,
            workers=args.workers, n_intervals=args.n_intervals,
            degree=args.degree, tol=args.tol, seed=args.seed)
        fit = summary["fit"]
        for entry in summary["table"]:
            mean = entry.get("mean_wall_time_s")
            mean_txt = f"{mean:.3f} s" if mean else "all reps failed"
            print(f"N={entry['n']}: {entry['reps_ok']} ok, "
                  f"{entry['reps_failed']} failed, mean {mean_txt}")
        print(f"fitted exponent {fit['slope']:.4f} per vehicle "
              f"(R^2 {fit['r_squared']:.3f})")
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())
