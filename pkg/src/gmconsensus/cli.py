"""Command line: ``run`` an experiment or ``validate`` its config.

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import ConfigError
from .experiment import emit_reports, load_config, run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmconsensus", description="Distributed GM-PHD consensus experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write CSV reports")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--threads", type=int, help="worker processes for MC runs")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"ok: {len(cfg.protocols)} protocol(s) x {len(cfg.t_values)} t value(s), {cfg.runs} run(s)")
            return 0
        over = {}
        if args.out is not None:
            over["output_dir"] = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            over["seed"] = args.seed
        if args.threads is not None:
            over["threads"] = args.threads
        cfg = replace(cfg, **over)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        table = run_experiment(cfg)
        paths = emit_reports(table, cfg.output_dir)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
