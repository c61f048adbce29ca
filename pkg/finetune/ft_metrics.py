"""
评估指标 (Evaluation metrics): relative L2, generalization gap and the results table.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from utils.errors import DegenerateTargetError, ShapeError

RESULTS_FIELDS = ["pde", "init", "n", "seed", "train_rl2", "test_rl2", "gap", "rollout_step", "rollout_rl2", "secs"]


def relative_l2(pred: np.ndarray, true: np.ndarray) -> float:
    """Per-sample ||pred - true|| / ||true|| over every non-batch axis, averaged over samples."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeError(f"relative_l2: {pred.shape} vs {true.shape}")
    if pred.ndim < 2 or pred.shape[0] == 0:
        raise ShapeError(f"relative_l2 needs a non-empty batch axis, got {pred.shape}")
    axes = tuple(range(1, pred.ndim))
    tn = np.sqrt(np.sum(true * true, axis=axes))
    if np.any(tn == 0):
        raise DegenerateTargetError("relative_l2: target with zero norm")
    diff = pred - true
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=axes)) / tn))


@dataclass
class EvalReport:
    pde: str
    init: str
    n: int
    seed: int
    train_rl2: float
    test_rl2: float
    rollout: List[float] = field(default_factory=list)
    secs: float = 0.0
    curve: List[float] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.test_rl2 - self.train_rl2

    def to_rows(self) -> List[dict]:
        """One results row without rollout, or one row per rollout step."""
        base = {
            "pde": self.pde,
            "init": self.init,
            "n": self.n,
            "seed": self.seed,
            "train_rl2": self.train_rl2,
            "test_rl2": self.test_rl2,
            "gap": self.gap,
            "secs": self.secs,
        }
        if not self.rollout:
            return [{**base, "rollout_step": 0, "rollout_rl2": np.nan}]
        return [{**base, "rollout_step": s + 1, "rollout_rl2": e} for s, e in enumerate(self.rollout)]

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def generalization_gap(report: EvalReport) -> float:
    return report.gap


def append_results(reports: List[EvalReport], path: str | Path) -> Optional[Path]:
    rows = [row for r in reports for row in r.to_rows()]
    if not rows:
        return None
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    new = not p.exists() or p.stat().st_size == 0
    pd.DataFrame(rows, columns=RESULTS_FIELDS).to_csv(p, mode="a", header=new, index=False)
    return p
