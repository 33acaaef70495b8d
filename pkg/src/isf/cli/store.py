"""`store` executable: run one in-memory store shard."""

from __future__ import annotations

import argparse
import signal
import sys

from ..store import DEFAULT_MAX_BYTES, ServerConfig, StoreServer


def parse_cpus(spec: str) -> list[int]:
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="store", description="in-memory tensor store shard")
    parser.add_argument("--bind", required=True, metavar="HOST:PORT")
    parser.add_argument("--max-bytes", type=int, default=DEFAULT_MAX_BYTES)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--cpus", type=parse_cpus, default=None,
                        help="advisory cpu affinity list, e.g. 0,1 or 0-3")
    parser.add_argument("--quiet", action="store_true", help="disable per-request log lines")
    args = parser.parse_args(argv)

    host, _, port = args.bind.rpartition(":")
    config = ServerConfig(max_bytes=args.max_bytes, workers=args.workers, cpus=args.cpus,
                          log_stream=None if args.quiet else sys.stdout)
    try:
        server = StoreServer(host or "127.0.0.1", int(port), config)
    except OSError as exc:
        print(f"store: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return 1

    def _term(signum, frame):
        server.shutdown()
        sys.exit(0)

    signal.signal(signal.SIGTERM, _term)
    signal.signal(signal.SIGINT, _term)
    server.serve_forever(ready_stream=sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
