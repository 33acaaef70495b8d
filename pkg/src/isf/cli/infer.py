"""`infer` executable: one rank running three-step networked (or inline) inference."""

from __future__ import annotations

import sys

from .. import client as client_mod
from ..reproducers import EXIT_OK, infer, infer_inline
from ._common import await_go, client_config, load_spec, rank_parser, run_rank


def main(argv: list[str] | None = None) -> int:
    parser = rank_parser("infer", "timed inference loop (send, evaluate, retrieve)")
    parser.add_argument("--inline", action="store_true",
                        help="evaluate the model in-process, no store involved")
    parser.add_argument("--num-ranks", type=int, default=1)  # accepted for launcher symmetry
    args = parser.parse_args(argv)
    spec = load_spec(args.spec)

    def loop(sink):
        if args.inline:
            await_go()
            infer_inline(spec, args.rank, args.seed, sink=sink,
                         start_delay_ms=args.start_delay_ms)
            return EXIT_OK
        with client_mod.connect(client_config(), sink=sink) as handle:
            await_go()
            infer(spec, handle, args.rank, args.seed, start_delay_ms=args.start_delay_ms)
        return EXIT_OK

    return run_rank(loop, args)


if __name__ == "__main__":
    sys.exit(main())
