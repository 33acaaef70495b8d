"""`orchestrate` executable: validate and run deployment plans."""

from __future__ import annotations

import argparse
import json
import sys

from ..orchestrator import PlanError, plan_from_file, run_plan


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="orchestrate",
                                     description="launch a deployment plan on this machine")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="launch a plan and wait for completion")
    p_run.add_argument("--plan", required=True)
    p_run.add_argument("--out", required=True, help="artifact directory")
    p_run.add_argument("--run-id", default=None)
    p_run.add_argument("--timeout", type=float, default=600.0)

    p_val = sub.add_parser("validate", help="parse and validate a plan file")
    p_val.add_argument("--plan", required=True)

    args = parser.parse_args(argv)
    try:
        plan = plan_from_file(args.plan)
    except (PlanError, FileNotFoundError) as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return 2

    if args.cmd == "validate":
        print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
        return 0

    try:
        summary = run_plan(plan, args.out, run_id=args.run_id, timeout_s=args.timeout)
    except RuntimeError as exc:
        print(f"launch failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2))
    return 0 if summary["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
