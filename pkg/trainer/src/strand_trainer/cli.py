"""Batch CLI for the two training stages."""

from __future__ import annotations

import argparse
import sys

from .train import TrainConfig, run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="strand-trainer",
        description="train the reconstruction networks on a rendered dataset")
    parser.add_argument("--stage", required=True,
                        choices=("spatial", "temporal"))
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="output .hgbw path")
    parser.add_argument("--init", default="", help="initial .hgbw checkpoint")
    parser.add_argument("--iterations", type=int, default=200)
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--crop", type=int, default=32)
    parser.add_argument("--seq-len", type=int, default=4, dest="seq_len")
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--holdout-phase", type=int, default=-1,
                        dest="holdout_phase")
    args = parser.parse_args(argv)

    config = TrainConfig(
        stage=args.stage, data=args.data, out=args.out, init=args.init,
        iterations=args.iterations, batch=args.batch, crop=args.crop,
        seq_len=args.seq_len, lr=args.lr, seed=args.seed,
        holdout_phase=args.holdout_phase)
    try:
        result = run(config)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.stage} stage done: eval loss "
          f"{result.initial_loss:.6f} -> {result.final_loss:.6f}; "
          f"weights written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
