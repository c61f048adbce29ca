"""
报告生成 (Report rendering): line plots as SVG plus the aggregated CSV behind each plot.
"""
import logging
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from utils.errors import ArtifactError  # noqa: E402


def _save(fig, table: pd.DataFrame, out_dir: Path, name: str) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    svg, csv = out_dir / f"{name}.svg", out_dir / f"{name}.csv"
    fig.tight_layout()
    fig.savefig(svg, format="svg")
    plt.close(fig)
    table.to_csv(csv, index=False)
    return [svg, csv]


def _mean_std(table: pd.DataFrame, keys: List[str], value: str) -> pd.DataFrame:
    agg = table.groupby(keys, sort=True)[value].agg(["mean", "std"]).reset_index()
    agg["std"] = agg["std"].fillna(0.0)
    return agg


def _errorbar_lines(agg: pd.DataFrame, line_key: str, x: str, xlabel: str, ylabel: str, title: str, logx: bool):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, group in agg.groupby(line_key, sort=True):
        ax.errorbar(group[x], group["mean"], yerr=group["std"], marker="o", capsize=3, label=str(name))
    if logx:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return fig


def finetune_figures(results_csv: Path, out_dir: Path) -> List[Path]:
    results = pd.read_csv(results_csv)
    runs = results.drop_duplicates(["pde", "init", "n", "seed"])
    written = []

    agg = _mean_std(runs, ["init", "n"], "test_rl2")
    fig = _errorbar_lines(agg, "init", "n", "labeled samples", "test relative L2", "Error vs budget", True)
    written += _save(fig, agg, out_dir, "error_vs_budget")

    agg = _mean_std(runs, ["init", "n"], "gap")
    fig = _errorbar_lines(agg, "init", "n", "labeled samples", "test - train relative L2", "Generalization gap", True)
    written += _save(fig, agg, out_dir, "gap_vs_budget")

    steps = results[results["rollout_step"] > 0]
    if not steps.empty:
        agg = _mean_std(steps, ["init", "rollout_step"], "rollout_rl2")
        fig = _errorbar_lines(agg, "init", "rollout_step", "unrolled step", "relative L2", "Rollout error", False)
        written += _save(fig, agg, out_dir, "rollout")
    return written


def convergence_figure(finetune_dir: Path, out_dir: Path) -> List[Path]:
    frames = []
    for curve in sorted(finetune_dir.glob("*/*/loss.csv")):
        init, n, seed = curve.parent.name.split("_")
        table = pd.read_csv(curve)
        if table.empty:
            continue
        frames.append(table.assign(init=init, n=int(n[1:]), seed=int(seed[1:])))
    if not frames:
        return []
    curves = pd.concat(frames, ignore_index=True)
    n_max = curves["n"].max()
    agg = _mean_std(curves[curves["n"] == n_max], ["init", "epoch"], "loss")
    fig = _errorbar_lines(agg, "init", "epoch", "epoch", "training loss", f"Convergence (n={n_max})", False)
    return _save(fig, agg, out_dir, "convergence")


def icl_figures(sweep_csv: Path, out_dir: Path) -> List[Path]:
    table = pd.read_csv(sweep_csv)
    written = []
    agg = _mean_std(table, ["source", "J"], "rl2")
    fig = _errorbar_lines(agg, "source", "J", "number of demos", "relative L2", "OOD error vs demos", False)
    written += _save(fig, agg, out_dir, "icl_vs_demos")
    agg = _mean_std(table, ["source", "J"], "scale")
    fig = _errorbar_lines(agg, "source", "J", "number of demos", "scale (slope)", "Scale vs demos", False)
    written += _save(fig, agg, out_dir, "icl_scale_vs_demos")
    return written


def sweep_figure(sweep_csv: Path, out_dir: Path) -> List[Path]:
    table = pd.read_csv(sweep_csv)
    table["blur"] = table["blur_min"].astype(str) + "-" + table["blur_max"].astype(str)
    agg = _mean_std(table, ["blur", "mask_ratio"], "test_rl2")
    fig = _errorbar_lines(agg, "blur", "mask_ratio", "mask ratio", "test relative L2", "Mask / blur sweep", False)
    return _save(fig, agg, out_dir, "sweep")


def cost_figure(cost_csv: Path, out_dir: Path) -> List[Path]:
    table = pd.read_csv(cost_csv).drop_duplicates(["pde", "n"], keep="last")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    x = range(len(table))
    ax.bar([i - 0.2 for i in x], table["unlabeled_secs"], width=0.4, label="unlabeled")
    ax.bar([i + 0.2 for i in x], table["labeled_secs"], width=0.4, label="labeled")
    ax.set_xticks(list(x), [f"{p} n={n}" for p, n in zip(table["pde"], table["n"])])
    ax.set_yscale("log")
    ax.set_ylabel("wall time (s)")
    ax.set_title("Generation cost")
    ax.legend()
    return _save(fig, table, out_dir, "cost")


def render_report(root: Path, out_dir: Path) -> List[Path]:
    """
    Renders every figure whose source CSV exists under the output root.

    Returns:
        List[Path]: The SVG and CSV files written.
    """
    root, out_dir = Path(root), Path(out_dir)
    written: List[Path] = []
    results = root / "finetune" / "results.csv"
    if results.exists():
        logging.info("Step 1: fine-tuning curves")
        written += finetune_figures(results, out_dir)
        written += convergence_figure(root / "finetune", out_dir)
    for sweep in sorted((root / "icl").glob("*/sweep.csv")):
        logging.info(f"Step 2: ICL curves from {sweep}")
        written += icl_figures(sweep, out_dir / sweep.parent.name)
    for sweep in sorted((root / "sweep").glob("*/sweep.csv")):
        logging.info(f"Step 3: pretraining sweep from {sweep}")
        written += sweep_figure(sweep, out_dir / sweep.parent.name)
    cost = root / "cost" / "cost.csv"
    if cost.exists():
        written += cost_figure(cost, out_dir)
    if not written:
        raise ArtifactError(f"nothing to report under {root}: run finetune, icl, sweep or cost first")
    return written
