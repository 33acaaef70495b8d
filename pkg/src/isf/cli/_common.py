"""Shared argument handling for the rank executables."""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..client import SHARD_MAP_ENV, ClientConfig, ClientError, ConnectError
from ..reproducers import EXIT_CONFIG, EXIT_NO_DATA, EXIT_OK, EXIT_STORE, WorkloadSpec
from ..timing import TimingSink


def rank_parser(prog: str, description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog, description=description)
    parser.add_argument("--spec", required=True, help="workload spec JSON file")
    parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--run-id", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", required=True, help="per-rank timing CSV output path")
    parser.add_argument("--start-delay-ms", type=int, default=0,
                        help="initial offset before the first iteration")
    return parser


def load_spec(path: str) -> WorkloadSpec:
    with open(path) as fh:
        return WorkloadSpec.from_dict(json.load(fh))


def client_config() -> ClientConfig:
    mode = "clustered" if os.environ.get(SHARD_MAP_ENV) else "colocated"
    return ClientConfig(mode=mode)


def await_go(enabled: bool = True) -> None:
    """Launcher barrier: announce UP, then block until GO arrives on stdin.

    Keeps the measured loop clear of the interpreter spawn storm, the way a
    parallel launcher gates ranks. Skipped when stdin is not wired (direct
    CLI use).
    """
    if not enabled or sys.stdin is None or sys.stdin.closed or sys.stdin.isatty():
        return
    print("UP", flush=True)
    sys.stdin.readline()


def run_rank(loop, args) -> int:
    """Run a rank loop with standard exit codes and CSV flushing."""
    sink = TimingSink(args.run_id, args.rank)
    try:
        code = loop(sink)
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TimeoutError as exc:
        print(f"no data: {exc}", file=sys.stderr)
        sink.write_csv(args.csv)
        return EXIT_NO_DATA
    except (ClientError, ConnectError, RuntimeError) as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return EXIT_STORE
    sink.write_csv(args.csv)
    return code if code is not None else EXIT_OK
