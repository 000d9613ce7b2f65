"""Console script for difftime."""

from __future__ import annotations

import logging
from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler

from difftime import experiments
from difftime.manifest import RunManifest, load_manifest
from difftime.options import set_options
from difftime.typing import BpdMode, SampleMode

app = typer.Typer(help="Diffusion-time experiments on analytic targets.", no_args_is_help=True)
console = Console(stderr=True)
logger = logging.getLogger("difftime")

ManifestOpt = Annotated[Path, typer.Option("--manifest", "-m", help="TOML run manifest.", exists=True, dir_okay=False)]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Override the manifest seed.")]
OutDirOpt = Annotated[Optional[Path], typer.Option("--out-dir", help="Override the output directory.")]
WorkersOpt = Annotated[Optional[int], typer.Option("--workers", min=1, help="Concurrent work items.")]
TimeOpt = Annotated[float, typer.Option("--T", help="Diffusion time.")]
OracleOpt = Annotated[bool, typer.Option("--oracle", help="Use the exact score of the target.")]
VerboseOpt = Annotated[bool, typer.Option("--verbose", "-v", help="Log debug messages.")]


def _setup_logging(verbose: bool) -> None:
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.addHandler(RichHandler(console=console, show_path=False))
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def _run(
    command: Callable[[RunManifest], int],
    manifest: Path,
    seed: int | None,
    out_dir: Path | None,
    workers: int | None,
    verbose: bool,
) -> None:
    """Load the manifest, apply the overrides, run the command and exit with its status."""
    _setup_logging(verbose)
    try:
        run = load_manifest(manifest).replace(seed=seed, out_dir=None if out_dir is None else str(out_dir))
        with set_options(workers=workers or 1):
            status = command(run)
    except Exception as err:  # noqa: BLE001
        logger.debug("Fatal error", exc_info=err)
        console.print(f"[bold red]Error:[/bold red] {err}")
        raise typer.Exit(code=1) from err
    if status == 0:
        console.print(f"[green]Done.[/green] Outputs in {run.out_dir} (manifest {run.hash[:12]}).")
    else:
        console.print(f"[yellow]Finished with failed or skipped items.[/yellow] Outputs in {run.out_dir}.")
    raise typer.Exit(code=status)


@app.command("train-scores")
def train_scores(
    manifest: ManifestOpt,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    verbose: VerboseOpt = False,
) -> None:
    """Train one score network per diffusion time of the grid."""
    _run(experiments.cmd_train_scores, manifest, seed, out_dir, workers, verbose)


@app.command("fit-aux")
def fit_aux(
    manifest: ManifestOpt,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    verbose: VerboseOpt = False,
) -> None:
    """Fit the auxiliary mixture at every diffusion time of the grid."""
    _run(experiments.cmd_fit_aux, manifest, seed, out_dir, workers, verbose)


@app.command("elbo-sweep")
def elbo_sweep(
    manifest: ManifestOpt,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    oracle: OracleOpt = False,
    verbose: VerboseOpt = False,
) -> None:
    """Estimate the ELBO decomposition over the grid, with and without the auxiliary bridge."""
    _run(lambda m: experiments.cmd_elbo_sweep(m, oracle), manifest, seed, out_dir, workers, verbose)


@app.command("sample")
def sample(
    manifest: ManifestOpt,
    T: TimeOpt,
    mode: Annotated[SampleMode, typer.Option("--mode", help="Starting distribution.")] = SampleMode.BASELINE,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    oracle: OracleOpt = False,
    verbose: VerboseOpt = False,
) -> None:
    """Sample the reverse process and summarize the data log-likelihood of the samples."""
    _run(lambda m: experiments.cmd_sample(m, mode, T, oracle), manifest, seed, out_dir, workers, verbose)


@app.command("bpd")
def bpd(
    manifest: ManifestOpt,
    T: TimeOpt,
    mode: Annotated[BpdMode, typer.Option("--mode", help="Endpoint distribution.")] = BpdMode.BASELINE,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    oracle: OracleOpt = False,
    verbose: VerboseOpt = False,
) -> None:
    """Compute bits per dimension of held-out points through the probability-flow ODE."""
    _run(lambda m: experiments.cmd_bpd(m, mode, T, oracle), manifest, seed, out_dir, workers, verbose)


@app.command("kl-bounds")
def kl_bounds(
    manifest: ManifestOpt,
    seed: SeedOpt = None,
    out_dir: OutDirOpt = None,
    workers: WorkersOpt = None,
    verbose: VerboseOpt = False,
) -> None:
    """Check the decay rate of the mismatch with the noise distribution."""
    _run(experiments.cmd_kl_bounds, manifest, seed, out_dir, workers, verbose)


if __name__ == "__main__":
    app()
