"""Command line: ``stochhom run|check|compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .compare import CompareError, compare_runs
from .config import OUTPUT_ENV, ConfigError, parse_config
from .output import SchemaError
from .runner import EXIT_ERROR, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochhom", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help=f"run directory (default: ${OUTPUT_ENV} or ./runs, plus the config name)")
    r.add_argument("--jobs", type=int, help="worker processes (overrides 'parallelism')")
    r.add_argument("--seed", type=int, help="master seed (overrides 'master_seed')")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    c = sub.add_parser("check", help="parse and validate a config without running it")
    c.add_argument("config")
    m = sub.add_parser("compare", help="compare two run manifests")
    m.add_argument("manifest_a")
    m.add_argument("manifest_b")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            print(json.dumps(compare_runs(args.manifest_a, args.manifest_b), indent=2))
            return 0
        cfg = parse_config(args.config)
        if args.command == "check":
            print(json.dumps(cfg.to_dict(), indent=2))
            return 0
        cfg = cfg.with_overrides(args.seed, args.jobs)
    except (ConfigError, CompareError, SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    code, run_dir = run(cfg, args.out, figures=not args.no_figures)
    print(f"{run_dir} exit={code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
