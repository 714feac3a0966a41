"""Command-line interface.

    faceveil <command> --config experiment.cfg [overrides]

Commands: remove-makeup, transfer, protect, evaluate,
calibrate-threshold, compare-api. Overrides round-trip into the
persisted effective config, so any run directory can be reproduced by
feeding its effective.cfg back through --config.

Exit codes: 0 success, 2 invalid config or missing inputs, 1 runtime
failure; failures emit one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import ArtifactMismatchError
from .experiment import (
    cmd_calibrate_threshold,
    cmd_compare_api,
    cmd_evaluate,
    cmd_protect,
    cmd_remove_makeup,
    cmd_transfer,
)

COMMANDS = {
    "remove-makeup": cmd_remove_makeup,
    "transfer": cmd_transfer,
    "protect": cmd_protect,
    "evaluate": cmd_evaluate,
    "calibrate-threshold": cmd_calibrate_threshold,
    "compare-api": cmd_compare_api,
}

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceveil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--t0", type=int, help="override the return step")
        p.add_argument("--s-inv", type=int, dest="s_inv", help="override inversion steps")
        p.add_argument("--s-sam", type=int, dest="s_sam", help="override sampling steps")
        p.add_argument(
            "--lambda-dir", type=float, dest="lambda_dir",
            help="override the makeup direction weight (0 = ablation)",
        )
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--run-dir", dest="run_dir", help="input run directory")
    return parser


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    ft = cfg.finetune
    ft_changes = {}
    for name in ("t0", "s_inv", "s_sam"):
        if getattr(args, name) is not None:
            ft_changes[name] = getattr(args, name)
    if args.lambda_dir is not None:
        ft_changes["weights"] = replace(ft.weights, direction=args.lambda_dir)
    if args.seed is not None:
        ft_changes["seed"] = args.seed
        cfg.seed = args.seed
    if ft_changes:
        cfg.finetune = replace(ft, **ft_changes)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.run_dir is not None:
        cfg.run_dir = args.run_dir
    return cfg


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "detail": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args)
    except (ConfigError, OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "invalid-config", str(exc))
    try:
        manifest_path = COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError, ArtifactMismatchError) as exc:
        return _fail(EXIT_CONFIG, "invalid-config", str(exc))
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all failures
        return _fail(EXIT_RUNTIME, "runtime-failure", f"{type(exc).__name__}: {exc}")
    print(manifest_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
