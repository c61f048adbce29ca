"""
示例数量扫描 (Demo-count sweep): relative L2, scale and shape against the number of demos J.

J = 0 is the plain model prediction, evaluated exactly as the fine-tuning evaluation does.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from datamodel.dm_types import Dataset
from finetune.ft_metrics import relative_l2
from finetune.ft_train import TrainedOperator, evaluate_operator
from icl.icl_metrics import scale_slope, shape_error
from icl.icl_mining import SOURCES, DemoCache, DemoSet, IclConfig, model_space, predict_with_demos
from utils.constant import DEFAULT_SEEDS, ICL_CHUNK, ICL_K
from utils.errors import DemoError
from utils.utils import derive_seed

SWEEP_FIELDS = ["pde", "J", "source", "seed", "rl2", "scale", "shape"]


def sample_demos(pool: Dataset, J: int, seed: int) -> DemoSet:
    """J demos drawn without replacement from a labeled pool."""
    if J > pool.n:
        raise DemoError(f"demo pool exhausted: {J} demos requested, {pool.n} available")
    idx = np.sort(np.random.default_rng(seed).choice(pool.n, size=J, replace=False))
    return DemoSet(pool.subset(idx), provenance={"ranges": dict(pool.param_ranges), "seed": seed})


def icl_sweep(
    op: TrainedOperator,
    ood: Dataset,
    pool: Dataset,
    k: int = ICL_K,
    J_list: Sequence[int] = (0, 4, 16, 32),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    sources: Sequence[str] = SOURCES,
    chunk: int = ICL_CHUNK,
    out_csv: Optional[str | Path] = None,
) -> pd.DataFrame:
    """
    One row per (J, source, seed) with columns pde, J, source, seed, rl2, scale, shape.

    Args:
        op (TrainedOperator): Fine-tuned static or one-shot operator.
        ood (Dataset): Labeled out-of-distribution query set.
        pool (Dataset): Labeled demo pool from the same parameter range, disjoint seeds.
        k (int): Top-k locations per query location.
        J_list (Sequence[int]): Demo counts; 0 is the no-demo baseline.
        seeds (Sequence[int]): Demo-sampling seeds.
        sources (Sequence[str]): Similarity sources.
        chunk (int): Query chunk size.
        out_csv (str | Path | None): Where to write the table.
    """
    if not ood.labeled or not pool.labeled:
        raise DemoError("both the query set and the demo pool must be labeled")
    if max(J_list, default=0) > pool.n:
        raise DemoError(f"demo pool exhausted: largest J is {max(J_list)}, pool holds {pool.n}")

    target = op.targets(ood)
    baseline = op.predict(ood)
    baseline_rl2 = evaluate_operator(op, ood)
    cache = DemoCache()
    rows = []
    for J in J_list:
        for source in sources:
            config = IclConfig(k=k, source=source, chunk=chunk)
            for seed in seeds:
                if J == 0:
                    pred, rl2 = baseline, baseline_rl2
                else:
                    demos = sample_demos(pool, J, derive_seed(seed, "demos", J))
                    pred = model_space(predict_with_demos(op, ood, demos, config, cache))
                    rl2 = relative_l2(pred, target)
                rows.append({
                    "pde": ood.pde,
                    "J": J,
                    "source": source,
                    "seed": seed,
                    "rl2": rl2,
                    "scale": scale_slope(pred, target),
                    "shape": shape_error(pred, target),
                })
                logging.info(f"ICL J={J} source={source} seed={seed}: rl2 {rl2:.4f}")

    table = pd.DataFrame(rows, columns=SWEEP_FIELDS)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_csv, index=False)
    return table


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and across-seed std of rl2, scale and shape per (pde, J, source); columns like rl2_mean."""
    grouped = table.groupby(["pde", "J", "source"], sort=True)[["rl2", "scale", "shape"]].agg(["mean", "std"])
    grouped.columns = [f"{metric}_{stat}" for metric, stat in grouped.columns]
    return grouped.reset_index()
