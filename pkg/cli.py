"""
Command-line entry point for the workbench.

    python cli.py chsh-scan --theta-steps 360 --out runs/chsh
    python cli.py trials --model mixture --n 100000 --seed 7
    python cli.py dispersion-check --d 2,3,4
    python cli.py bohm-evolve --preset double-slit --plots
    python cli.py lhv-sim --config experiments/sign.env
"""

from typing import Dict, List, Optional
import argparse
import logging
import sys

from config import config
from workbench import __version__
from workbench.errors import WorkbenchError
from workbench.experiment_config import COMMON_PARAMS, SCHEMAS, ExperimentConfig, read_experiment_file
from workbench.experiment_runner import exit_status_for, run

logger = logging.getLogger(__name__)

_FLAG_TYPES = {"int": int, "float": float, "str": str, "ints": str, "floats": str}


def _add_param(parser: argparse.ArgumentParser, key: str, kind: str, choices, help_text: str) -> None:
    flag = "--" + key.replace("_", "-")
    if kind == "bool":
        parser.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        return
    parser.add_argument(flag, dest=key, type=_FLAG_TYPES[kind], choices=choices, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="workbench", description="Bell/CHSH, hidden-variable and pilot-wave checks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=config.log_level, help="logging level (default: %(default)s)")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        sub = subparsers.add_parser(name, allow_abbrev=False)
        sub.add_argument("--config", dest="config_file", default=None, help="KEY=value experiment file or a previous run's manifest.json")
        sub.add_argument("--out", dest="out_dir", default=None, help="output directory")
        for key, param in {**COMMON_PARAMS, **schema}.items():
            _add_param(sub, key, param.kind, param.choices, param.help)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    file_values = read_experiment_file(args.config_file, args.subcommand) if args.config_file else {}
    keys = {**COMMON_PARAMS, **SCHEMAS[args.subcommand]}
    overrides: Dict[str, object] = {key: getattr(args, key) for key in keys if getattr(args, key) is not None}
    out_dir = args.out_dir or f"{config.out_dir}/{args.subcommand}"
    return ExperimentConfig.resolve(args.subcommand, file_values, overrides, out_dir=out_dir)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except WorkbenchError as e:
        key = getattr(e, "key", None)
        logger.error(f"Configuration rejected{' (key ' + key + ')' if key else ''}: {e}")
        return exit_status_for(e)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
