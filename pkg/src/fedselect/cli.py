"""Command-line entry point: ``fedselect run|grid|verify``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import FLConfig, load_config, load_sweep
from .model import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _apply_flags(cfg: FLConfig, args: argparse.Namespace) -> FLConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if args.snapshot_interval is not None:
        changes["snapshot_interval"] = args.snapshot_interval
    if args.workers is not None:
        changes["workers"] = args.workers
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedselect", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("--snapshot-interval", type=int, help="save parameters every N rounds (0 = never)")
    common.add_argument("--workers", type=int, help="threads for client updates")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.add_argument("config")
    p = sub.add_parser("grid", parents=[common], help="run a parameter sweep")
    p.add_argument("config")
    p.add_argument("sweep")
    p = sub.add_parser("verify", parents=[common], help="run the oracle checks")
    p.add_argument("--full", action="store_true", help="more gradient samples")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from . import harness

    try:
        if args.command == "verify":
            report = harness.run_verification(quick=not args.full, seed=args.seed or 0)
            text = json.dumps(report, indent=2)
            if args.out_dir:
                out = Path(args.out_dir)
                out.mkdir(parents=True, exist_ok=True)
                (out / "verify.json").write_text(text + "\n")
            print(text)
            return EXIT_OK if report["passed"] else EXIT_RUNTIME
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "run":
            res = harness.run_experiment(cfg)
            if res.final is not None:
                print(f"final mean accuracy {res.final.mean_accuracy:.4f} -> {res.out_dir}")
        else:
            rows = harness.run_grid(cfg, load_sweep(args.sweep))
            for row in rows:
                print(row)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logging.getLogger("fedselect").debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
