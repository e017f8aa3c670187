"""
Theseus - CLI Interface

This module provides the command-line interface for Theseus: the
compression pipeline, the replacement analyses and the benchmark, each
writing its tables into an output directory.
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from theseus import __version__
from theseus.core.constants import ERRORS_FILE, LOG_FILE
from theseus.core.errors import ConfigError, TheseusError
from theseus.core.experiments import (
    CommandResult,
    cmd_analyze_replacement,
    cmd_compare_schedulers,
    cmd_depth_sweep,
    cmd_eval,
    cmd_pipeline,
    cmd_speed_bench,
    cmd_sweep_rate,
)
from theseus.core.run_config import SWEEP_MODES, RunConfigFile
from theseus.utils.common import append_jsonl, ensure_dir_exists, is_nonempty_dir

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _csv_floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _csv_ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


class TheseusCLI:
    """Command-line interface for the Theseus toolkit."""

    def __init__(self, console: Optional[Console] = None):
        """Initialize the CLI."""
        self.console = console or Console()
        self._handlers: List[logging.Handler] = []

    def build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="Run configuration file (dotted key = value lines)")
        common.add_argument("--seed", type=int, help="Base seed (overrides 'seed')")
        common.add_argument("--seeds", type=int, metavar="N", help="Run N seeds starting at the base seed")
        common.add_argument("--out", help="Output directory (overrides 'output_dir')")
        common.add_argument("--overwrite", action="store_true", help="Allow writing into a non-empty output directory")
        common.add_argument("--workers", type=int, default=1, help="Worker processes for seeds and grid points")
        common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="Override one config key (repeatable)")
        common.add_argument("--verbose", action="store_true", help="Enable debug logging")
        common.add_argument("--log-file", help=f"Log file (defaults to {LOG_FILE} in the output directory)")

        parser = argparse.ArgumentParser(
            prog="theseus",
            description="Theseus - compress transformer encoders by progressive module replacing",
        )
        parser.add_argument("--version", action="version", version=f"theseus {__version__}")
        subparsers = parser.add_subparsers(dest="command", help="Command to execute")

        subparsers.add_parser("pipeline", parents=[common],
                              help="Train predecessor, compress, fine-tune successor, test")

        analyze = subparsers.add_parser("analyze-replacement", parents=[common],
                                        help="Replace one module at a time and report the change")
        analyze.add_argument("--predecessor", required=True, help="Predecessor checkpoint")
        analyze.add_argument("--compressed", required=True, help="Hybrid checkpoint from a compress stage")
        analyze.add_argument("--split", default="dev", help="Split to evaluate on")

        sweep = subparsers.add_parser("sweep-rate", parents=[common], help="Constant replacing-rate sweep")
        sweep.add_argument("--rates", type=_csv_floats, help="Comma-separated rates in (0, 1]")
        sweep.add_argument("--mode", choices=SWEEP_MODES + ["both"], help="Learning-rate handling")
        sweep.add_argument("--predecessor", help="Reuse this predecessor checkpoint for every seed")

        compare = subparsers.add_parser("compare-schedulers", parents=[common],
                                        help="Constant vs. curriculum vs. anti-curriculum")
        compare.add_argument("--predecessor", help="Reuse this predecessor checkpoint for every seed")

        depth = subparsers.add_parser("depth-sweep", parents=[common],
                                      help="Compression ratios vs. truncated fine-tuning")
        depth.add_argument("--ratios", type=_csv_ints, help="Comma-separated group sizes, e.g. 2,3,4")
        depth.add_argument("--predecessor", help="Reuse this predecessor checkpoint for every seed")

        bench = subparsers.add_parser("speed-bench", parents=[common], help="Forward wall-clock comparison")
        bench.add_argument("--predecessor", help="Predecessor checkpoint")
        bench.add_argument("--successor", help="Successor (or hybrid) checkpoint")
        bench.add_argument("--batch", type=int, help="Batch size")
        bench.add_argument("--reps", type=int, help="Timed repetitions (>= 10)")

        evaluate = subparsers.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
        evaluate.add_argument("--checkpoint", required=True, help="Checkpoint to evaluate")
        evaluate.add_argument("--split", nargs="+", default=["dev", "test"], help="Splits to evaluate")
        return parser

    def run(self, args: Optional[List[str]] = None) -> int:
        """
        Run the CLI with the given arguments.

        Args:
            args: Command-line arguments (defaults to sys.argv[1:])

        Returns:
            Exit code (0 success, 1 failed run, 2 invalid usage or refused output directory)
        """
        if args is None:
            args = sys.argv[1:]

        parser = self.build_parser()
        parsed = parser.parse_args(args)
        if not parsed.command:
            parser.print_help()
            return EXIT_USAGE

        try:
            config = self._load_config(parsed)
        except (ConfigError, OSError) as e:
            self._configure_logging(parsed.verbose, parsed.log_file)
            logger.error(f"Invalid configuration: {e}")
            self._close_logging()
            return EXIT_USAGE

        out_dir = config.output_dir
        if is_nonempty_dir(out_dir) and not parsed.overwrite:
            self.console.print(f"[red]Output directory {out_dir} is not empty; pass --overwrite to reuse it[/red]")
            return EXIT_USAGE
        ensure_dir_exists(out_dir)
        self._configure_logging(parsed.verbose, parsed.log_file or os.path.join(out_dir, LOG_FILE))
        logger.info(f"theseus {__version__} {parsed.command}: config hash {config.hash}, output {out_dir}")

        try:
            result = self._dispatch(parsed, config, out_dir)
        except KeyboardInterrupt:
            logger.warning("Interrupted by user")
            self._close_logging()
            return EXIT_FAILURE
        except Exception as e:
            append_jsonl({
                "command": parsed.command,
                "error": type(e).__name__,
                "message": str(e),
                "config_hash": config.hash,
                "time": datetime.now().isoformat(timespec="seconds"),
            }, os.path.join(out_dir, ERRORS_FILE))
            logger.error(f"{parsed.command} failed: {e}", exc_info=not isinstance(e, TheseusError))
            self._close_logging()
            return EXIT_USAGE if isinstance(e, ConfigError) else EXIT_FAILURE

        self._print_result(result)
        self._close_logging()
        if result.errors:
            logger.error(f"{result.errors} runs failed; see {os.path.join(out_dir, ERRORS_FILE)}")
            return EXIT_FAILURE
        return EXIT_OK

    # -- configuration ---------------------------------------------------

    def _load_config(self, parsed: argparse.Namespace) -> RunConfigFile:
        config = RunConfigFile.load(parsed.config) if parsed.config else RunConfigFile.from_mapping({}, "<defaults>")
        overrides: Dict[str, Any] = {}
        for assignment in parsed.set:
            if "=" not in assignment:
                raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
            key, value = (part.strip() for part in assignment.split("=", 1))
            overrides[key] = value
        if parsed.seed is not None:
            overrides["seed"] = parsed.seed
        if parsed.seeds is not None:
            if parsed.seeds < 1:
                raise ConfigError(f"--seeds must be >= 1, got {parsed.seeds}")
            base = parsed.seed if parsed.seed is not None else config["seed"]
            overrides["seeds"] = list(range(base, base + parsed.seeds))
        if parsed.out:
            overrides["output_dir"] = parsed.out
        if getattr(parsed, "rates", None):
            overrides["sweep.rates"] = parsed.rates
        if getattr(parsed, "mode", None):
            overrides["sweep.modes"] = list(SWEEP_MODES) if parsed.mode == "both" else [parsed.mode]
        if getattr(parsed, "ratios", None):
            overrides["depth.ratios"] = parsed.ratios
        if getattr(parsed, "batch", None):
            overrides["bench.batch_size"] = parsed.batch
        if getattr(parsed, "reps", None):
            overrides["bench.reps"] = parsed.reps
        return config.with_overrides(overrides) if overrides else config

    # -- dispatch --------------------------------------------------------

    def _dispatch(self, parsed: argparse.Namespace, config: RunConfigFile, out_dir: str) -> CommandResult:
        workers = max(1, parsed.workers)
        command = parsed.command
        if command == "pipeline":
            return cmd_pipeline(config, out_dir, workers)
        if command == "analyze-replacement":
            return cmd_analyze_replacement(config, parsed.predecessor, parsed.compressed, out_dir, parsed.split)
        if command == "sweep-rate":
            return cmd_sweep_rate(config, out_dir, workers, parsed.predecessor)
        if command == "compare-schedulers":
            return cmd_compare_schedulers(config, out_dir, workers, parsed.predecessor)
        if command == "depth-sweep":
            return cmd_depth_sweep(config, out_dir, workers, parsed.predecessor)
        if command == "speed-bench":
            return cmd_speed_bench(config, out_dir, parsed.predecessor, parsed.successor)
        if command == "eval":
            return cmd_eval(config, parsed.checkpoint, out_dir, parsed.split)
        raise ConfigError(f"unknown command {command!r}")

    # -- output ----------------------------------------------------------

    def _print_result(self, result: CommandResult) -> None:
        table = Table(title=result.title)
        for column in result.columns:
            table.add_column(column, justify="left" if column in ("status", "config_hash") else "right")
        for row in result.rows:
            table.add_row(*(_cell(row.get(column, "")) for column in result.columns))
        self.console.print(table)
        for note in result.notes:
            self.console.print(f"[dim]{note}[/dim]")
        self.console.print(f"Summary written to [bold]{result.summary_path}[/bold]")

    def _configure_logging(self, verbose: bool, log_file: Optional[str]) -> None:
        package_logger = logging.getLogger("theseus")
        package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)
        formatter = logging.Formatter(LOG_FORMAT)
        handlers: List[logging.Handler] = [logging.StreamHandler()]
        if log_file:
            ensure_dir_exists(os.path.dirname(log_file))
            handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
        for handler in handlers:
            handler.setFormatter(formatter)
            package_logger.addHandler(handler)
        self._handlers = handlers

    def _close_logging(self) -> None:
        package_logger = logging.getLogger("theseus")
        for handler in self._handlers:
            package_logger.removeHandler(handler)
            handler.close()
        self._handlers = []


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


# Command-line entry point
def main(args: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI.

    Returns:
        Exit code
    """
    cli = TheseusCLI()
    return cli.run(args)
