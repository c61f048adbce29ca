"""
命令行入口 (Command-line harness): `nopt <stage> [options]`.

Every subcommand loads the experiment document, applies its flags as dotted
overrides, and runs one pipeline stage. Completed stages are skipped through
the run ledger unless --force is given. Any failure exits with code 1.
"""
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, List, Optional

import typer

from cli.cli_config import ExperimentConfig, apply_overrides, load_config
from cli.cli_pipeline import Pipeline, StageResult
from utils.errors import NoptError
from utils.utils import worker_count

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

app = typer.Typer(
    name="nopt",
    help="Desk-scale neural operator pretraining, fine-tuning and in-context experiments.",
    no_args_is_help=True,
    add_completion=False,
)

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", "-c", help="TOML experiment document.")]
PdeOpt = Annotated[Optional[str], typer.Option("--pde", help="poisson, helmholtz, rd or ns.")]
OutputOpt = Annotated[Optional[str], typer.Option("--output-dir", help="Root of all artifacts.")]
ForceOpt = Annotated[bool, typer.Option("--force", help="Rerun stages already in the ledger.")]
VerboseOpt = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")]
WorkersOpt = Annotated[Optional[int], typer.Option("--workers", help="Worker cap (default NOPT_THREADS).")]
CheckpointOpt = Annotated[Optional[Path], typer.Option("--checkpoint", help="Checkpoint directory.")]


def _pipeline(config_path: Optional[Path], pde: Optional[str], output_dir: Optional[str], force: bool,
              verbose: bool, workers: Optional[int], overrides: Optional[Dict[str, Any]] = None) -> Pipeline:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    config: ExperimentConfig = load_config(config_path)
    changes: Dict[str, Any] = dict(overrides or {})
    if pde is not None and pde != config.pde.name:
        # ranges in the document belong to the document's PDE
        changes.update({"pde.name": pde, "pde.ranges": {}})
    if output_dir is not None:
        changes["output_dir"] = output_dir
    if changes:
        config = apply_overrides(config, changes)
    return Pipeline(config, force=force, max_workers=worker_count(workers))


def _execute(stage: str, fn: Callable[[], Any]) -> None:
    try:
        result = fn()
    except NoptError as e:
        logging.error(f"{stage} failed: {e}")
        raise typer.Exit(code=1)
    except Exception as e:
        logging.error(f"{stage} failed with an unexpected error: {e}", exc_info=True)
        raise typer.Exit(code=1)
    payload = asdict(result) if isinstance(result, StageResult) else result
    typer.echo(json.dumps(payload, indent=2, ensure_ascii=False, default=str))


@app.command()
def generate(
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    n: Annotated[Optional[int], typer.Option("--n", help="Number of samples.")] = None,
    labeled: Annotated[Optional[bool], typer.Option("--labeled/--unlabeled", help="Run the solver or not.")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed")] = None,
    kind: Annotated[Optional[str], typer.Option("--kind", help="labeled, unlabeled, ood or pool.")] = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Generate a dataset into data/."""
    if kind is None:
        kind = "unlabeled" if labeled is False else "labeled"
    _execute("generate", lambda: _pipeline(config, pde, output_dir, force, verbose, workers)
             .generate(kind, n=n, seed=seed, labeled=labeled))


@app.command()
def pretrain(
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    union: Annotated[Optional[List[str]], typer.Option("--union", help="Other PDEs to pretrain on jointly.")] = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Pretrain on unlabeled data with the masking and blurring proxy task."""
    _execute("pretrain", lambda: _pipeline(config, pde, output_dir, force, verbose, workers).pretrain(union or None))


@app.command()
def finetune(
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    budget: Annotated[Optional[List[int]], typer.Option("--n", "--budget", help="Labeled budgets.")] = None,
    seed: Annotated[Optional[List[int]], typer.Option("--seed", help="Replicate seeds.")] = None,
    init: Annotated[Optional[List[str]], typer.Option("--init", help="random, pretrained or frozen.")] = None,
    checkpoint: CheckpointOpt = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Supervised training at each budget, seed and init mode; writes finetune/results.csv."""
    _execute("finetune", lambda: _pipeline(config, pde, output_dir, force, verbose, workers).finetune(
        budget, seed, init, checkpoint=str(checkpoint) if checkpoint else None))


@app.command(name="eval")
def evaluate(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", help="Fine-tuned checkpoint directory.")],
    split: Annotated[str, typer.Option("--split", help="train, test or ood.")] = "test",
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    output_dir: OutputOpt = None,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Relative L2 of a fine-tuned checkpoint on one split."""
    _execute("eval", lambda: _pipeline(config, pde, output_dir, False, verbose, workers)
             .evaluate(str(checkpoint), split))


@app.command()
def icl(
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    checkpoint: CheckpointOpt = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Out-of-distribution error against the number of demos."""
    _execute("icl", lambda: _pipeline(config, pde, output_dir, force, verbose, workers)
             .icl(str(checkpoint) if checkpoint else None))


@app.command()
def cost(
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    n: Annotated[int, typer.Option("--n", help="Number of samples to time.")] = 50,
    seed: Annotated[Optional[int], typer.Option("--seed")] = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Wall time of labeled against unlabeled generation; appends cost/cost.csv."""
    _execute("cost", lambda: _pipeline(config, pde, output_dir, force, verbose, workers).cost(n, seed))


@app.command()
def sweep(
    axes: Annotated[Optional[List[str]], typer.Argument(help="More grid axes, e.g. blur=0:0,0:1.")] = None,
    grid: Annotated[Optional[List[str]], typer.Option("--grid", help="Grid axis, e.g. mask=0,0.3,0.7.")] = None,
    config: ConfigOpt = None,
    pde: PdeOpt = None,
    budget: Annotated[Optional[List[int]], typer.Option("--n", "--budget")] = None,
    seed: Annotated[Optional[List[int]], typer.Option("--seed")] = None,
    output_dir: OutputOpt = None,
    force: ForceOpt = False,
    verbose: VerboseOpt = False,
    workers: WorkersOpt = None,
):
    """Pretrain over a mask/blur grid and fine-tune each point."""
    specs = list(grid or []) + list(axes or [])
    _execute("sweep", lambda: _pipeline(config, pde, output_dir, force, verbose, workers)
             .sweep(specs, budget, seed))


@app.command()
def report(
    config: ConfigOpt = None,
    output_dir: OutputOpt = None,
    verbose: VerboseOpt = False,
):
    """Render SVG plots and their CSVs into report/."""
    _execute("report", lambda: _pipeline(config, None, output_dir, False, verbose, None).report())


def main():
    app()


if __name__ == "__main__":
    main()
