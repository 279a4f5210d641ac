#!/usr/bin/env python3
"""
Qubit Trajectories - Main Entry Point.

One subcommand per run mode. Settings come from an optional flat
configuration file, ``QUBIT_TRAJ_*`` environment variables and the flags
below, in increasing precedence.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from qubit_trajectories.config import (
    MODES,
    ConfigError,
    RunConfig,
    load_config,
    parse_config,
)
from qubit_trajectories.export import FORMATS
from qubit_trajectories.logger import setup_logging
from qubit_trajectories.runner import run

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAILURE = 3

_MODE_HELP = {
    "generate": "Simulate omniscient trajectories and write their measurement records.",
    "reconstruct": "Filter records from records_path into trajectories.",
    "average": "Raw-average tomography against the master equation.",
    "validate": "Tomographic validation of the filter against projective readout.",
    "histogram": "State histograms, mean trajectory and spread asymmetry.",
    "sweep": "Outcome-deviance sweep over assumed detection efficiencies.",
    "grid": "Raw-average tomography over every point of the preset grid.",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qubit-traj",
        description=(
            "Qubit Trajectories - simulate, filter and validate continuously "
            "monitored qubits."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        command = sub.add_parser(mode, help=_MODE_HELP[mode])
        command.add_argument(
            "--config", metavar="PATH", help="Flat key = value configuration file."
        )
        command.add_argument("--out", metavar="DIR", help="Output directory (out_dir).")
        command.add_argument(
            "--seed", metavar="N", help="Master seed (overrides the file)."
        )
        command.add_argument("--workers", metavar="N", help="Worker threads.")
        command.add_argument(
            "--format",
            metavar="FMT",
            action="append",
            choices=FORMATS,
            help="Export format; repeat for several (csv, ndjson, bin).",
        )
        command.add_argument(
            "--presets", metavar="PATH", help="Preset YAML file (presets_path)."
        )
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides = {"mode": args.command}
    flags = {
        "out_dir": args.out,
        "master_seed": args.seed,
        "workers": args.workers,
        "presets_path": args.presets,
        "formats": ",".join(args.format) if args.format else None,
    }
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return overrides


def _load(args: argparse.Namespace) -> RunConfig:
    overrides = _overrides(args)
    if args.config:
        return load_config(args.config, overrides=overrides)
    return parse_config("", overrides=overrides, source="command line")


def main(argv: list[str] | None = None) -> int:
    """Run the requested mode; returns 0, 2 on configuration errors, 3 on failures."""
    args = _build_parser().parse_args(argv)

    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    logger = setup_logging(config)
    try:
        run(config)
    except KeyboardInterrupt:
        logger.warning("Interrupted; manifest marks outputs invalid")
        return EXIT_RUNTIME_FAILURE
    except Exception:
        # runner has logged the error and written the manifest
        logger.debug(traceback.format_exc())
        return EXIT_RUNTIME_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
