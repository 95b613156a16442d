"""Command line entry point.

    chemoconsume simulate|sweep|asymptotics|inequalities CONFIG [--out DIR] [--seed N] [--threads N]

The worker count for ensembles and sweeps comes from ``--threads``, else the
``CHEMOCONSUME_THREADS`` environment variable, else ``[run] threads``, else 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .experiments import CLI_MODES, ConfigError, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chemoconsume", description="Simulate and certify the regularized chemotaxis-consumption system.")
    ap.add_argument("mode", choices=sorted(CLI_MODES))
    ap.add_argument("config", help="INI experiment config")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="base seed (overrides [run] seed)")
    ap.add_argument("--threads", type=int, help="worker processes (overrides CHEMOCONSUME_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    threads = args.threads
    if threads is None and os.environ.get("CHEMOCONSUME_THREADS"):
        threads = int(os.environ["CHEMOCONSUME_THREADS"])
    if threads is not None and threads < 1:
        print(f"thread count must be >= 1, got {threads}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else cfg.out
    code, summary = run_experiment(cfg, out, threads)
    failed = [k for k, c in summary["checks"].items() if not c["passed"]]
    status = "all checks passed" if not failed else "failed: " + ", ".join(failed)
    print(f"{cfg.mode}: {len(summary['checks'])} checks, {status}")
    return code


if __name__ == "__main__":
    sys.exit(main())
