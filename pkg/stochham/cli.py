import argparse
import json
import sys
from typing import List, Optional

from rich.console import Console
from rich.table import Table

from core.exceptions import ConfigurationError, GridMismatchError, StochHamError, UnknownSystemError
from core.logger import get_cli_logger, setup_logging
from schemas.run_config import RunConfig, load_run_config
from stochham.runner import ExperimentRunner
from stochham.systems import list_catalog

logger = get_cli_logger()

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="stochham",
        description="Simulate stochastic Hamiltonian systems and check their structural properties",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run a configuration and write its artifacts")
    run.add_argument("--config", type=str, required=True, help="Run configuration (YAML or JSON)")
    run.add_argument("--out", type=str, help="Output directory (overrides the configuration)")
    run.add_argument("--seed", type=int, help="Master seed (overrides the configuration)")
    run.add_argument("--paths", type=int, help="Number of paths (overrides the configuration)")
    run.add_argument("--dt", type=float, help="Time step (overrides the configuration)")
    run.add_argument("--quiet", action="store_true", help="Only log warnings and hide progress bars")

    catalog = subparsers.add_parser("catalog", help="List the available systems")
    catalog.add_argument("--json", action="store_true", help="Print the catalog as JSON")

    return parser.parse_args(argv)


def print_catalog(as_json: bool) -> None:
    entries = list_catalog()
    if as_json:
        json.dump(list(entries), sys.stdout, indent=2)
        sys.stdout.write("\n")
        return

    table = Table(title="stochham systems")
    table.add_column("System", style="bold")
    table.add_column("Category")
    table.add_column("Parameters (default)")
    table.add_column("Description")
    for entry in entries:
        params = ", ".join(f"{name}={spec['default']:g}" for name, spec in entry["params"].items())
        table.add_row(entry["name"], entry["category"], params or "-", entry["description"])
    Console().print(table)


def load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config).with_overrides(
        seed=args.seed, paths=args.paths, dt=args.dt, out=args.out
    )


def run_command(config: RunConfig, quiet: bool = False) -> int:
    runner = ExperimentRunner(config, progress=not quiet)
    report = runner.run()
    runner.save_results(config.output.directory)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def exit_code_for(error: Exception, loading: bool) -> int:
    """Exit code for a failure; grid mismatches are configuration errors only while loading."""
    config_errors = (ConfigurationError, UnknownSystemError) + ((GridMismatchError,) if loading else ())
    if isinstance(error, config_errors):
        logger.error("Configuration error: %s", error)
        return EXIT_CONFIG_ERROR
    if isinstance(error, StochHamError):
        logger.error("Run failed: %s", error)
    else:
        logger.exception("Unexpected error: %s", error)
    return EXIT_RUNTIME_ERROR


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    setup_logging(level="WARNING" if getattr(args, "quiet", False) else None)

    try:
        if args.command == "catalog":
            print_catalog(args.json)
            return EXIT_OK
        config = load_config(args)
    except Exception as e:
        return exit_code_for(e, loading=True)

    try:
        return run_command(config, quiet=args.quiet)
    except Exception as e:
        return exit_code_for(e, loading=False)


if __name__ == "__main__":
    sys.exit(main())
