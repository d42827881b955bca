"""Personalization-limit sweep, optionally crossed with the training-set size.

    python scripts/sweep_alpha.py --alphas 0 0.05 0.3 0.5 0.8 --train-sizes 50 100
"""

import argparse

from fedselect.config import load_config
from fedselect.harness import run_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/cifar_like.toml")
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.05, 0.3, 0.5, 0.8])
    ap.add_argument("--train-sizes", type=int, nargs="*", default=[])
    ap.add_argument("--rounds", type=int)
    ap.add_argument("--out-dir", default="runs/sweep_alpha")
    args = ap.parse_args()

    base = load_config(args.config)
    if args.rounds is not None:
        base = base.replace(rounds=args.rounds)
    sweep = {"local.alpha": args.alphas}
    if args.train_sizes:
        sweep["data.train_size"] = args.train_sizes
    for row in run_grid(base, sweep, args.out_dir):
        print(row)


if __name__ == "__main__":
    main()
