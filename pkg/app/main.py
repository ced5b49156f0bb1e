#!/usr/bin/env python3
import argparse
import json
import os
import sys

from coagkit_errors import CoagkitError, ConfigError
from coagkit_logging import logger
from experiment_config import load_config
from schemas import KINDS, PUBLISHED, json_schema


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coagkit", description="Coagulation solvers, stochastic coalescents and their experiments.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in KINDS + ("validate-config",):
        sub = commands.add_parser(name)
        sub.add_argument("--config", required=True, help="experiment JSON file")
        if name != "validate-config":
            sub.add_argument("--seed", type=int, default=None, help="overrides the config seed and COAGKIT_SEED")
            sub.add_argument("--out", default=None, help="output directory")
            sub.add_argument("--threads", type=int, default=None, help="replica worker threads (0 = physical cores)")
    schema = commands.add_parser("schema", help="print the JSON schema of the experiment config or the run summary")
    schema.add_argument("name", choices=sorted(PUBLISHED))
    return parser


def _seed_from_environment():
    seed = os.getenv("COAGKIT_SEED")
    if not seed:
        return None
    try:
        return int(seed)
    except ValueError:
        raise ConfigError(f"COAGKIT_SEED must be an integer, got {seed!r}", field="COAGKIT_SEED")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "schema":
            print(json.dumps(json_schema(args.name), indent=2, sort_keys=True))
            return 0
        if args.command == "validate-config":
            config = load_config(args.config)
            logger.info(f"{args.config} is a valid {config.kind} configuration")
            return 0

        seed = args.seed if args.seed is not None else _seed_from_environment()
        config = load_config(args.config, seed=seed, output=args.out, workers=args.threads, kind=args.command)
        # Imported here so validate-config stays cheap
        from class_factory import experiment_runner

        bundle = experiment_runner.run(config)
        logger.info(f"{config.kind} finished: {len(bundle.files)} artifacts in {bundle.out_dir}")
        return bundle.exit_code
    except CoagkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
