"""
Main entry point for the Loewner laboratory.
Batch command-line front end: every command writes its tables, plots and a run manifest.
"""

import argparse
import logging
import sys
from dataclasses import fields
from typing import Any, Dict, List, Optional

from engine.commands import EXIT_CODES, ROUGH_MODES, CommandResult, LabCommands
from engine.errors import InvalidArgumentError
from engine.settings import LabSettings, PrecisionLevel, parse_config_file

SETTING_FLAGS = ("c_hat", "c_abs", "phi_exponent", "ode_rtol", "ode_atol")
NON_FLAG_KEYS = ("command", "verbose", "config")


def rough_p(text: str) -> float:
    """argparse type for --p in (2, 3]."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 2.0 < value <= 3.0:
        raise argparse.ArgumentTypeError(f"p must lie in (2, 3], got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one sub-command per experiment."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--precision", choices=[p.value for p in PrecisionLevel], default="standard")
    common.add_argument("--config", help="key=value file; flags given on the command line win")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--c-hat", dest="c_hat", type=float, help="random constant in Psi")
    common.add_argument("--c-abs", dest="c_abs", type=float, help="absolute constant in Phi")
    common.add_argument("--phi-exponent", dest="phi_exponent", type=float, help="q in phi(n) = (log n)^q")
    common.add_argument("--rtol", dest="ode_rtol", type=float)
    common.add_argument("--atol", dest="ode_atol", type=float)

    parser = argparse.ArgumentParser(
        prog="loewner-lab",
        description="Loewner traces from square-root slit maps, kappa-continuity and rough-path checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    trace = sub.add_parser("trace", parents=[common], help="build one approximate trace")
    trace.add_argument("--kappa", type=float, default=2.0)
    trace.add_argument("--n", type=int, default=256)
    trace.add_argument("--T", type=float, default=None)
    trace.add_argument("--y-tip", dest="y_tip", type=float, default=None)
    trace.add_argument("--format", default="csv,svg,json", help="comma list of csv, svg, json")

    compare = sub.add_parser("compare-kappa", parents=[common], help="kappa-continuity of traces")
    compare.add_argument("--kappa", type=float, default=2.0)
    compare.add_argument("--kappa-seq", dest="kappa_seq", default="geom:1:8",
                         help="comma list, or geom:J1:J2 for kappa + 2^-j (geom- for kappa - 2^-j)")
    compare.add_argument("--schedule", default=None, help="comma list of resolutions per leg")
    compare.add_argument("--beta", type=float, default=None)
    compare.add_argument("--workers", type=int, default=1)

    rough = sub.add_parser("roughpath", parents=[common], help="rough-path lift and RDE checks")
    rough.add_argument("--mode", choices=ROUGH_MODES, default="lift-check")
    rough.add_argument("--p", type=rough_p, default=2.5)
    rough.add_argument("--kappa", type=float, default=2.0)
    rough.add_argument("--kappa-seq", dest="kappa_seq", default=None)
    rough.add_argument("--grid", type=int, default=None, help="dyadic grid of the lift")
    rough.add_argument("--z0", default="1j")
    rough.add_argument("--perturb-j", dest="perturb_j", default="1,2,3,4,5,6,7,8")

    maps = sub.add_parser("maps", parents=[common], help="dump a slit block next to its ODE oracle")
    maps.add_argument("--c", type=float, default=3.0)
    maps.add_argument("--tau", type=float, default=1.0)
    maps.add_argument("--shift", type=float, default=0.0)
    maps.add_argument("--grid-size", dest="grid_size", type=int, default=50)

    beta = sub.add_parser("beta", parents=[common], help="estimate the derivative exponent")
    beta.add_argument("--n", type=int, default=256)
    beta.add_argument("--kappa-min", dest="kappa_min", type=float, default=0.5)
    beta.add_argument("--kappa-max", dest="kappa_max", type=float, default=2.5)
    beta.add_argument("--kappa-count", dest="kappa_count", type=int, default=5)
    beta.add_argument("--y-min", dest="y_min", type=float, default=1e-3)
    beta.add_argument("--y-max", dest="y_max", type=float, default=1e-1)
    beta.add_argument("--y-count", dest="y_count", type=int, default=8)
    beta.add_argument("--t-count", dest="t_count", type=int, default=65)

    refine = sub.add_parser("refine", parents=[common], help="refinement ladder with a rate fit")
    refine.add_argument("--kappa", type=float, default=2.0)
    refine.add_argument("--ns", default="64,128,256,512")
    refine.add_argument("--beta", type=float, default=None)

    replay = sub.add_parser("replay", help="re-run a manifest and compare digests")
    replay.add_argument("--manifest", required=True, help="manifest file or output directory")
    replay.add_argument("--out", required=True)
    replay.add_argument("-v", "--verbose", action="count", default=0)

    parser.set_defaults(_subparsers=sub)
    return parser


def configure_logging(verbosity: int) -> None:
    """WARNING by default, INFO with -v, DEBUG with -vv."""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def apply_config(
    parser: argparse.ArgumentParser, argv: Optional[List[str]], args: argparse.Namespace
) -> argparse.Namespace:
    """
    Fold a key=value config file into the parsed arguments.

    Keys naming a setting become setting overrides; keys naming a flag of the command
    become its defaults, so flags given explicitly still win. Unknown keys are a usage error.
    """
    try:
        values = parse_config_file(args.config)
    except InvalidArgumentError as e:
        parser.error(str(e))

    setting_names = {f.name for f in fields(LabSettings)}
    command_parser = args._subparsers.choices[args.command]
    flag_names = {a.dest for a in command_parser._actions} - set(NON_FLAG_KEYS) - {"help", "out"}

    defaults: Dict[str, Any] = {}
    settings: Dict[str, str] = {}
    for key, value in values.items():
        if key in flag_names:
            defaults[key] = value
        elif key in setting_names:
            settings[key] = value
        else:
            parser.error(f"unknown config key '{key}' in {args.config}")

    command_parser.set_defaults(**defaults)
    args = parser.parse_args(argv)
    args.config_settings = settings
    return args


def collect_flags(args: argparse.Namespace) -> Dict[str, Any]:
    """Flat, JSON-friendly flag set recorded in the run manifest."""
    flags = {
        k: v for k, v in vars(args).items()
        if k not in NON_FLAG_KEYS and not k.startswith("_") and k != "config_settings"
    }
    overrides: Dict[str, Any] = dict(getattr(args, "config_settings", {}) or {})
    for name in SETTING_FLAGS:
        if name in flags:
            value = flags.pop(name)
            if value is not None:
                overrides[name] = value
    flags["overrides"] = overrides
    return flags


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    if getattr(args, "config", None):
        args = apply_config(parser, argv, args)

    commands = LabCommands()
    result, message = commands.execute_command(args.command, collect_flags(args))
    stream = sys.stdout if result is CommandResult.SUCCESS else sys.stderr
    print(f"{args.command}: {message}", file=stream)
    return EXIT_CODES[result]


if __name__ == "__main__":
    sys.exit(main())
