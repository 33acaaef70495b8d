"""`mexgen` executable: emit reproducible random MEX1 model blobs."""

from __future__ import annotations

import argparse
import sys

from ..executors import build_identity_blob, random_affine_blob, random_mlp_blob


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mexgen", description="generate MEX1 model files")
    parser.add_argument("--type", choices=["identity", "affine", "mlp"], required=True)
    parser.add_argument("--in", dest="in_dim", type=int, help="input feature size")
    parser.add_argument("--out", dest="out_dim", type=int, help="output feature size")
    parser.add_argument("--hidden", type=str, default="",
                        help="comma-separated hidden sizes (mlp only)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-o", "--output", required=True)
    args = parser.parse_args(argv)

    if args.type == "identity":
        blob = build_identity_blob()
    elif args.type == "affine":
        if not args.in_dim or not args.out_dim:
            parser.error("--type affine requires --in and --out")
        blob = random_affine_blob(args.in_dim, args.out_dim, args.seed)
    else:
        if not args.in_dim or not args.out_dim:
            parser.error("--type mlp requires --in and --out")
        hidden = [int(h) for h in args.hidden.split(",") if h.strip()]
        blob = random_mlp_blob([args.in_dim] + hidden + [args.out_dim], args.seed)

    with open(args.output, "wb") as fh:
        fh.write(blob)
    print(f"wrote {len(blob)} bytes to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
