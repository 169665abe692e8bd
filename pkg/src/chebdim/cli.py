"""Command-line entry point.

    chebdim run --config runs.toml [--seed N] [--paths N] [--out DIR]
                [--methods brute_force,cheb_model_space] [--workers N]
    chebdim compare --summary out/swap/summary.csv

Exit codes: 0 success, 2 invalid arguments or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import METHODS, ConfigError, load_config
from .harness import RunError, compare, read_summary, run

log = logging.getLogger("chebdim")


def _methods(value: str) -> tuple[str, ...]:
    names = tuple(m.strip() for m in value.split(",") if m.strip())
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return names


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chebdim", description="Dynamic initial margin via Chebyshev tensors.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate and compute DIM surfaces for every configured run")
    p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="override simulation.seed")
    p.add_argument("--paths", type=_positive, help="override simulation.paths")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--methods", type=_methods, help="comma-separated subset of methods")
    p.add_argument("--workers", type=_positive, help="threads per method (results do not depend on it)")

    p = sub.add_parser("compare", help="render error and cost tables from a summary.csv")
    p.add_argument("--summary", required=True, type=Path)
    return parser


def _cmd_run(args) -> int:
    configs = load_config(args.config)
    multi = len(configs) > 1
    for cfg in configs:
        cfg = cfg.with_overrides(args.seed, args.paths, args.methods, args.workers)
        out = args.out / cfg.name if multi else args.out
        summary = run(cfg, out)
        print(compare(summary))
        print(f"outputs written to {out}")
    return 0


def _cmd_compare(args) -> int:
    print(compare(read_summary(args.summary)), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_compare(args)
    except ConfigError as exc:
        print(f"chebdim: config error: {exc}", file=sys.stderr)
        return 2
    except (RunError, OSError, ValueError) as exc:
        print(f"chebdim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
