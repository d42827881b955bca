"""Final mean accuracy of every algorithm on the label-shift benchmark.

Desk-scale analog of the main comparison and ablation tables. Writes a CSV
with one row per (algorithm, seed) plus a per-algorithm mean.

    python scripts/compare_algorithms.py --seeds 0 1 2 --out runs/compare.csv
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from fedselect.config import AlgorithmSpec, load_config
from fedselect.server import run_federation

ALGORITHMS = {
    "fedselect": AlgorithmSpec("fedselect"),
    "fedavg": AlgorithmSpec("fedavg"),
    "fedavg_ft": AlgorithmSpec("fedavg_ft", ft_epochs=3),
    "local_only": AlgorithmSpec("local_only"),
    "head_partition": AlgorithmSpec("fixed_partition", partition_layer=-1),
    "input_partition": AlgorithmSpec("fixed_partition", partition_layer=0),
    "middle_partition": AlgorithmSpec("fixed_partition", partition_layer=1),
    "personalize_least": AlgorithmSpec("personalize_least"),
    "random_partition": AlgorithmSpec("random_partition", partition_fraction=0.5),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/cifar_like.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--only", nargs="*", choices=sorted(ALGORITHMS))
    ap.add_argument("--out", default="runs/compare.csv")
    args = ap.parse_args()

    base = load_config(args.config)
    rows = []
    for name, spec in ALGORITHMS.items():
        if args.only and name not in args.only:
            continue
        accs = []
        for seed in args.seeds:
            t0 = time.perf_counter()
            h = run_federation(base.replace(algorithm=spec, seed=seed))
            acc = h.reports[-1].mean_accuracy
            accs.append(acc)
            rows.append([name, seed, repr(acc)])
            print(f"{name:18s} seed {seed}: {acc:.4f} ({time.perf_counter() - t0:.1f}s)", flush=True)
        print(f"{name:18s} mean   : {np.mean(accs):.4f} +- {np.std(accs):.4f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "seed", "mean_accuracy"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
