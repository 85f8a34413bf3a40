"""
Main entry point for the walsh-snapping experiment harness.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

import click
import structlog

from .config import ConfigurationError, get_default_config_path, load_config
from .harness import accept as accept_suite
from .harness import list_experiments, run_all
from .reporting import RunMetrics

EXIT_PASS = 0
EXIT_GATE_FAILURE = 1
EXIT_CONFIGURATION_ERROR = 2
EXIT_INTERNAL_ERROR = 3

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def configure_logging(log_level: str) -> None:
    """Route structlog through stdlib logging."""
    logging.basicConfig(
        level=getattr(logging, log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logging.getLogger().setLevel(getattr(logging, log_level))
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.processors.format_exc_info,
            structlog.processors.KeyValueRenderer(key_order=["event"]),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _exit_code(metrics: RunMetrics) -> int:
    if metrics.errored:
        return EXIT_INTERNAL_ERROR
    if metrics.failed:
        return EXIT_GATE_FAILURE
    return EXIT_PASS


def _echo_summary(metrics: RunMetrics) -> None:
    for report in metrics.reports:
        click.echo(f"{report.experiment:<18} {report.status.value:<8} {report.wall_clock:8.2f}s")
        for row in report.failed_rows:
            click.echo(f"    FAIL {row.quantity}: estimate={row.estimate!r} oracle={row.oracle!r}")
        if report.error:
            click.echo(f"    ERROR {report.error}")


def _overrides(ctx: click.Context) -> dict:
    return {
        "log_level": ctx.obj.get("log_level"),
        "output_dir": ctx.obj.get("output_dir"),
        "seed": ctx.obj.get("seed"),
    }


@click.group(invoke_without_command=True)
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS),
    help="Log level",
    envvar="WALSH_LOG_LEVEL",
    default=None,
)
@click.option(
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    help="Directory for CSV and JSON output",
    envvar="WALSH_OUTPUT_DIR",
)
@click.option(
    "--seed",
    type=int,
    help="Master seed for every stochastic experiment",
)
@click.option(
    "--version",
    is_flag=True,
    help="Show version information",
)
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], output_dir: Optional[Path], seed: Optional[int], version: bool) -> None:
    """
    Walsh Snapping - simulation and Dirichlet-form experiments for Walsh-type diffusions.
    """
    if version:
        from . import __version__
        click.echo(f"walsh-snapping version {__version__}")
        ctx.exit(EXIT_PASS)
    ctx.ensure_object(dict)
    ctx.obj.update(log_level=log_level, output_dir=output_dir, seed=seed)
    configure_logging(log_level or "INFO")
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command("list")
def list_command() -> None:
    """List registered experiments."""
    for experiment in list_experiments():
        click.echo(f"{experiment.id}: {experiment.description}")
        for gate in experiment.gates:
            click.echo(f"    gate: {gate}")


@cli.command("run")
@click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
def run_command(ctx: click.Context, config: Optional[Path]) -> None:
    """Run the experiments listed in CONFIG (default: config/experiments.yaml)."""
    logger = structlog.get_logger("walsh_snapping")
    config = config or Path(get_default_config_path())
    try:
        loaded = load_config(str(config), _overrides(ctx))
        if not loaded.experiments:
            raise ConfigurationError(f"{config} lists no experiments")
        configure_logging(loaded.log_level)
        metrics = run_all(loaded, ctx.obj.get("output_dir"))
    except ConfigurationError as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIGURATION_ERROR)
    except Exception as e:
        logger.error("run_failed", error=str(e))
        sys.exit(EXIT_INTERNAL_ERROR)
    _echo_summary(metrics)
    sys.exit(_exit_code(metrics))


@cli.command("accept")
@click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
def accept_command(ctx: click.Context, config: Optional[Path]) -> None:
    """Run the gated acceptance suite (registry defaults unless CONFIG is given)."""
    logger = structlog.get_logger("walsh_snapping")
    try:
        loaded = load_config(
            str(config) if config is not None else None,
            _overrides(ctx),
            default_ids=[e.id for e in list_experiments()],
        )
        configure_logging(loaded.log_level)
        metrics = accept_suite(loaded, ctx.obj.get("output_dir"))
    except ConfigurationError as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIGURATION_ERROR)
    except Exception as e:
        logger.error("accept_failed", error=str(e))
        sys.exit(EXIT_INTERNAL_ERROR)
    _echo_summary(metrics)
    sys.exit(_exit_code(metrics))


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
