"""`consumer` executable: one ML-side rank gathering training data."""

from __future__ import annotations

import sys

from .. import client as client_mod
from ..reproducers import EXIT_OK, consume
from ._common import await_go, client_config, load_spec, rank_parser, run_rank


def main(argv: list[str] | None = None) -> int:
    parser = rank_parser("consumer", "timed consume loop (poll, gather, train)")
    parser.add_argument("--producers", required=True,
                        help="comma-separated assigned producer ranks")
    parser.add_argument("--shuffle", action="store_true",
                        help="gather assigned tensors in random order")
    parser.add_argument("--no-verify", action="store_true",
                        help="skip payload checksum verification")
    parser.add_argument("--field", default="sol")
    args = parser.parse_args(argv)
    spec = load_spec(args.spec)
    producers = [int(p) for p in args.producers.split(",") if p.strip()]

    def loop(sink):
        with client_mod.connect(client_config(), sink=sink) as handle:
            await_go()
            consume(spec, handle, args.rank, args.seed, producers,
                    verify=not args.no_verify, shuffle=args.shuffle, fieldname=args.field)
        return EXIT_OK

    return run_rank(loop, args)


if __name__ == "__main__":
    sys.exit(main())
