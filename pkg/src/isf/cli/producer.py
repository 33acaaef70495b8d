"""`producer` executable: one simulation rank feeding the store."""

from __future__ import annotations

import sys

from .. import client as client_mod
from ..reproducers import EXIT_OK, produce
from ._common import await_go, client_config, load_spec, rank_parser, run_rank


def main(argv: list[str] | None = None) -> int:
    parser = rank_parser("producer", "timed produce loop (sleep, send, retrieve)")
    parser.add_argument("--num-ranks", type=int, default=1)
    parser.add_argument("--field", default="sol")
    args = parser.parse_args(argv)
    spec = load_spec(args.spec)

    def loop(sink):
        with client_mod.connect(client_config(), sink=sink) as handle:
            await_go()
            produce(spec, handle, args.rank, args.seed, args.num_ranks,
                    fieldname=args.field, start_delay_ms=args.start_delay_ms)
        return EXIT_OK

    return run_rank(loop, args)


if __name__ == "__main__":
    sys.exit(main())
