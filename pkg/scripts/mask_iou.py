"""Final-round mask IoU between clients, grouped by class overlap.

Writes the final-layer IoU matrix (rows/columns ordered by client id) and
prints the mean IoU for client pairs that share a class versus pairs that
do not. Values are raw IoU; any normalization is left to plotting.

    python scripts/mask_iou.py --alpha 0.3 --out runs/iou_final_layer.csv
"""

import argparse
from pathlib import Path

import numpy as np

from fedselect.config import load_config
from fedselect.metrics import iou_matrix
from fedselect.server import build_federation, run_federation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/cifar_like.toml")
    ap.add_argument("--alpha", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/iou_final_layer.csv")
    args = ap.parse_args()

    cfg = load_config(args.config).with_overrides({"local.alpha": args.alpha, "seed": args.seed})
    model, clients = build_federation(cfg)
    h = run_federation(cfg, model, clients)
    last = model.spans[-1]
    mat = iou_matrix([c.mask for c in h.clients], (last.start, last.stop))

    shared, disjoint = [], []
    for j, a in enumerate(h.clients):
        for k in range(j + 1, len(h.clients)):
            (shared if set(a.classes) & set(h.clients[k].classes) else disjoint).append(mat[j, k])
    print("classes per client:", [c.classes for c in h.clients])
    print(f"mean IoU, pairs sharing a class: {np.mean(shared):.3f}")
    print(f"mean IoU, pairs sharing none:    {np.mean(disjoint):.3f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, mat, delimiter=",", fmt="%.6f")


if __name__ == "__main__":
    main()
