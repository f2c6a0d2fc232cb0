"""Command-line entry point: ``thermorom <command> [options]``.

Exit status is 0 on success, 1 on invalid input or configuration and 2
when training or a rollout diverges numerically.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, command_overrides, resolve
from .io import FormatError

# command -> (stage, config sections its overrides apply to)
COMMANDS = {
    "gen-data": (pipeline.gen_data, ()),
    "train-sae": (pipeline.stage_train_sae, ("sae",)),
    "eval-sae": (pipeline.stage_eval_sae, ()),
    "pod": (pipeline.stage_pod, ()),
    "train-spnn": (pipeline.stage_train_spnn, ("spnn",)),
    "train-uc": (pipeline.stage_train_uc, ("uc",)),
    "rollout": (pipeline.stage_rollout, ()),
    "report": (pipeline.stage_report, ()),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--preset", help="named preset: couette or tire-like")
    common.add_argument("--seed", type=int, help="seed for data, split and all networks")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: run)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--lambda-r", type=float, dest="lambda_r")
    common.add_argument("--lambda-d", type=float, dest="lambda_d")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="thermorom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _config_for(args) -> dict:
    """Preset and/or --config, falling back to the run directory's saved config."""
    path = args.config
    saved = args.out / pipeline.CONFIG
    if path is None and args.preset is None:
        if not saved.exists():
            raise ConfigError(f"no --preset or --config given and {saved} does not exist")
        path = saved
    overrides = command_overrides(args.epochs, args.lr, args.lambda_r, args.lambda_d,
                                  COMMANDS[args.command][1])
    if args.seed is not None:
        overrides["seed"] = args.seed
        cfg = resolve(args.preset, path, overrides)
        _reseed(cfg, args.seed)
        return cfg
    return resolve(args.preset, path, overrides)


def _reseed(cfg: dict, seed: int) -> None:
    if cfg["data"]["generator"] != "file":
        cfg["data"]["seed"] = seed
    cfg["split"]["seed"] = seed
    for section in ("sae", "spnn", "uc"):
        cfg[section]["random_state"] = seed


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage, _ = COMMANDS[args.command]
    try:
        cfg = _config_for(args)
        if args.command != "gen-data" and not args.out.is_dir():
            raise pipeline.MissingArtifactError(f"run directory {args.out} does not exist")
        result = stage(cfg, args.out)
    except FloatingPointError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, dict) and all(isinstance(v, float) for v in result.values()):
        print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
