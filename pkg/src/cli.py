import functools
import logging
import os
import sys
from contextlib import ExitStack
from typing import Dict, List, Optional

import click
from rich.console import Console
from rich.progress import Progress, TextColumn, BarColumn, TimeElapsedColumn, TimeRemainingColumn
from rich.table import Table

from .config import RunConfig, apply_overrides, default_config, load_config, save_config
from .core.manifest import verify_manifest
from .core.stages import (
    ArtifactPaths,
    run_analyze,
    run_attribute,
    run_embed,
    run_fit,
    run_mask,
    run_report,
    run_synth,
    run_train,
)
from .errors import (
    AttributionPipelineError,
    ConfigError,
    DependencyError,
    NumericalError,
    TrainingError,
)
from .utils.logger import app_logger as logger, log_stage, setup_logger

# Initialize rich console
console = Console()

EXIT_CODES = (
    (ConfigError, 2),
    (DependencyError, 3),
    (NumericalError, 4),
    (TrainingError, 4),
)


def exit_code_for(error: Exception) -> int:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return 1


def handle_errors(command):
    """Print pipeline errors and exit with the code matching their type."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        with log_stage(command.__name__.replace("_", " ")):
            try:
                return command(*args, **kwargs)
            except AttributionPipelineError as e:
                logger.error(str(e))
                console.print(f"[bold red]Error:[/bold red] {e}")
                sys.exit(exit_code_for(e))
    return wrapper


class ProgressBars:
    """Hands out rich progress callbacks for the stages of one command."""

    def __init__(self, stack: ExitStack):
        self.progress = stack.enter_context(Progress(
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
            TimeElapsedColumn(),
            TimeRemainingColumn(),
            console=console
        ))

    def __call__(self, description: str):
        task = self.progress.add_task(f"[green]{description}...", total=None)

        def update(info: Dict) -> None:
            self.progress.update(task, completed=info["completed"], total=info["total"])

        return update


def _context(ctx: click.Context):
    config: RunConfig = ctx.obj["config"]
    return config, ArtifactPaths.from_config(config, ctx.obj["config_path"])


def _print_outputs(outputs: List[str]) -> None:
    console.print(f"Wrote [bold]{len(outputs)}[/bold] files")
    for path in outputs:
        console.print(f"  [blue]{path}[/blue]")


def _print_summary(report) -> None:
    table = Table(show_header=True)
    table.add_column("Table", style="cyan")
    table.add_column("Rows", justify="right")
    for name, frame in report.tables.items():
        table.add_row(name, str(len(frame)))
    console.print(table)

    iou_rows = report.summary.get("iou_by_threshold", [])
    if iou_rows:
        console.print("\n[bold cyan]BA vs NWP overlap[/bold cyan]")
        overlap = Table(show_header=True)
        overlap.add_column("Threshold", justify="right")
        overlap.add_column("IoU", justify="right")
        overlap.add_column("Random", justify="right")
        for row in iou_rows:
            overlap.add_row(f"{row['threshold']:g}", f"{row['iou_mean']:.3f}", f"{row['random_mean']:.3f}")
        console.print(overlap)

    for family, counts in report.summary.get("significant", {}).items():
        console.print(f"{family}: {counts['rejected']}/{counts['tested']} significant after BH")


# Set up CLI
@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Run config JSON file")
@click.option("--seed", type=int, help="Override every seed in the config")
@click.option("--jobs", type=int, help="Worker processes (0 = automatic)")
@click.option("--method", type=click.Choice(["gxi", "ig"]), help="Attribution method")
@click.option("--layers", type=str, help="'auto' or comma-separated layer ids")
@click.option("--thresholds", type=str, help="Comma-separated ascending percentages")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.option("--log-file", type=str, help="Log file path")
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Optional[str],
    seed: Optional[int],
    jobs: Optional[int],
    method: Optional[str],
    layers: Optional[str],
    thresholds: Optional[str],
    verbose: bool,
    log_file: Optional[str]
):
    """Brain-alignment vs next-word-prediction attribution pipeline."""
    log_level = logging.DEBUG if verbose else logging.INFO
    if log_file:
        setup_logger("brain_attrib", log_file=log_file, level=log_level)
    else:
        logger.setLevel(log_level)
    if verbose:
        click.echo("Verbose logging enabled")

    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    if ctx.invoked_subcommand == "config":
        return
    try:
        config = load_config(config_path) if config_path else default_config()
        config = apply_overrides(config, seed, jobs, method, layers, thresholds)
    except ConfigError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        sys.exit(exit_code_for(e))
    ctx.obj["config"] = config


@cli.group("config")
def config_group():
    """Create run configuration files."""


@config_group.command("init")
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--force", is_flag=True, help="Overwrite an existing file")
@handle_errors
def config_init(path: str, force: bool):
    """Write the default configuration to PATH."""
    if os.path.exists(path) and not force:
        raise ConfigError([f"{path} already exists (use --force to overwrite)"])
    save_config(default_config(), path)
    console.print(f"Default configuration written to [bold blue]{path}[/bold blue]")


@cli.command()
@click.pass_context
@handle_errors
def synth(ctx: click.Context):
    """Generate the synthetic corpus and brain responses."""
    config, paths = _context(ctx)
    console.print(f"[bold blue]Synthesizing[/bold blue] {config.synthetic.n_words} words, "
                  f"{config.synthetic.n_subjects} subjects")
    _print_outputs(run_synth(config, paths))


@cli.command()
@click.pass_context
@handle_errors
def train(ctx: click.Context):
    """Train the toy language model on the corpus."""
    config, paths = _context(ctx)
    with ExitStack() as stack:
        outputs = run_train(config, paths, ProgressBars(stack))
    _print_outputs(outputs)


@cli.command()
@click.pass_context
@handle_errors
def embed(ctx: click.Context):
    """Build delay-concatenated design matrices per layer."""
    config, paths = _context(ctx)
    with ExitStack() as stack:
        outputs = run_embed(config, paths, ProgressBars(stack))
    _print_outputs(outputs)


@cli.command()
@click.pass_context
@handle_errors
def fit(ctx: click.Context):
    """Fit voxelwise encoding models with nested cross-validation."""
    config, paths = _context(ctx)
    with ExitStack() as stack:
        outputs = run_fit(config, paths, ProgressBars(stack))
    _print_outputs(outputs)


@cli.command()
@click.pass_context
@handle_errors
def attribute(ctx: click.Context):
    """Attribute brain-alignment and next-word losses to context words."""
    config, paths = _context(ctx)
    with ExitStack() as stack:
        outputs = run_attribute(config, paths, ProgressBars(stack))
    _print_outputs(outputs)


@cli.command()
@click.pass_context
@handle_errors
def analyze(ctx: click.Context):
    """Compute overlap, locality, spread, feature and significance tables."""
    config, paths = _context(ctx)
    report, outputs = run_analyze(config, paths)
    _print_outputs(outputs)
    _print_summary(report)


@cli.command()
@click.pass_context
@handle_errors
def mask(ctx: click.Context):
    """Run masking ablations against random-word controls."""
    config, paths = _context(ctx)
    with ExitStack() as stack:
        outputs = run_mask(config, paths, ProgressBars(stack))
    _print_outputs(outputs)


@cli.command()
@click.pass_context
@handle_errors
def report(ctx: click.Context):
    """Merge analysis and masking results into the final report."""
    config, paths = _context(ctx)
    metrics, outputs = run_report(config, paths)
    _print_outputs(outputs)
    _print_summary(metrics)


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False, exists=True))
@handle_errors
def verify(directory: str):
    """Re-check the digests recorded in DIRECTORY's manifest."""
    problems = verify_manifest(directory)
    if problems:
        for problem in problems:
            console.print(f"[red]{problem}[/red]")
        sys.exit(1)
    console.print(f"[bold green]All outputs in {directory} match their manifest[/bold green]")


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
