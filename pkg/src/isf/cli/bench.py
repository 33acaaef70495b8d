"""`bench` executable: run experiments and re-check reports."""

from __future__ import annotations

import argparse
import json
import sys

from ..bench import available_experiments, check_properties, load_experiment, run_experiment


def _print_verdicts(verdicts: list[dict]) -> bool:
    failed = False
    for v in verdicts:
        print(f"[{v['status']:>12s}] {v['name']}: measured={v['measured']} "
              f"threshold={v['threshold']}" + (f"  ({v['note']})" if v.get("note") else ""))
        if v["status"] == "FAIL":
            failed = True
    return failed


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description="experiment runner and checker")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--experiment", required=True,
                       help=f"one of {', '.join(available_experiments())}, or 'all'")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--profile", default="default", choices=["default", "quick", "paper"])
    p_run.add_argument("--paper-scale", action="store_true",
                       help="shorthand for --profile paper")
    p_run.add_argument("--repetitions", type=int, default=None)
    p_run.add_argument("--timeout", type=float, default=600.0)

    p_check = sub.add_parser("check", help="re-evaluate verdicts of a report.json")
    p_check.add_argument("--report", required=True)

    args = parser.parse_args(argv)

    if args.cmd == "check":
        with open(args.report) as fh:
            report = json.load(fh)
        verdicts = check_properties(report, report["thresholds"])
        return 1 if _print_verdicts(verdicts) else 0

    profile = "paper" if args.paper_scale else args.profile
    ids = available_experiments() if args.experiment == "all" else [args.experiment]
    exit_code = 0
    for exp_id in ids:
        exp = load_experiment(exp_id)
        print(f"=== {exp_id}: {exp.get('title', '')} (profile={profile})")
        report = run_experiment(exp, args.out, profile=profile,
                                repetitions=args.repetitions, timeout_s=args.timeout)
        if _print_verdicts(report["verdicts"]):
            exit_code = 1
        print(f"report: {args.out}/{exp_id}/report.json")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
