"""Command line entry point: ``randac validate | run | plots``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, default_config_path, validate_config
from .errors import ConfigurationError, PreconditionError, RandacError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randac", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and cross-check a config file")
    v.add_argument("config", nargs="?", default=None, help="config path (default: shipped default.cfg)")

    r = sub.add_parser("run", help="run an experiment suite")
    r.add_argument("--kind", required=True, choices=KINDS)
    r.add_argument("--config", default=None)
    r.add_argument("--seed", type=int, default=None, help="override master_seed")
    r.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("plots", help="write plotting scripts for a finished run")
    p.add_argument("--manifest", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            cfg = validate_config(args.config or default_config_path())
            print(f"ok: {cfg.source} (dim={cfg.dim}, n={list(cfg.n)}, theta={list(cfg.theta)}, reps={cfg.reps})")
            return EXIT_PASS
        if args.command == "run":
            from .orchestrator import run
            if args.workers < 1:
                raise ConfigurationError("--workers must be >= 1")
            cfg = validate_config(args.config or default_config_path())
            manifest = run(cfg, args.kind, workers=args.workers, seed=args.seed)
            for v in manifest.verdicts:
                tag = "PASS" if v["passed"] else ("WARN" if v["advisory"] else "FAIL")
                print(f"{tag} {v['name']}: {v['detail']}")
            print(f"manifest: {cfg.output_dir}/{args.kind}-seed{manifest.master_seed}/manifest.json")
            return EXIT_PASS if manifest.passed else EXIT_FAIL
        if args.command == "plots":
            from .orchestrator import emit_plots
            for path in emit_plots(args.manifest):
                print(path)
            return EXIT_PASS
    except (ConfigurationError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RandacError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG
