"""
基于相似度的示例挖掘 (Similarity-based demo mining) for out-of-distribution inference.

For each query location (t, h, w) the L1 distance over the representation
axis is taken to every demo location; the true demo solutions at the k
closest locations are averaged. Demo locations are flattened in (j, t, h, w)
order and equal distances are resolved by ascending flattened index.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from datamodel.dm_ops import fingerprint
from datamodel.dm_types import Dataset
from utils.constant import ICL_CHUNK, ICL_K
from utils.errors import ConfigError, DemoError, ShapeError
from utils.utils import run_indexed_jobs

SOURCES = ("model_output", "backbone_feature")


@dataclass
class IclConfig:
    k: int = ICL_K
    source: str = "model_output"
    chunk: int = ICL_CHUNK

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"similarity source must be one of {SOURCES}, got '{self.source}'")
        if self.chunk < 1:
            raise ConfigError(f"query chunk must be >= 1, got {self.chunk}")
        if self.k < 1:
            raise DemoError(f"k must be >= 1, got {self.k}")


@dataclass
class DemoSet:
    """J paired inputs and true solutions, solutions shaped (J, T, C_out, H, W)."""

    dataset: Dataset
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.dataset.n < 1:
            raise DemoError("a demo set needs at least one demo")
        if not self.dataset.labeled:
            raise DemoError("demos need their true solutions")
        if not self.provenance:
            self.provenance = dict(self.dataset.param_ranges)

    @property
    def J(self) -> int:
        return self.dataset.n

    @property
    def Y(self) -> np.ndarray:
        return self.dataset.solutions


def _locations(repr_: np.ndarray) -> np.ndarray:
    """(..., T, D, H, W) -> (L, D) rows in (..., t, h, w) order, float64."""
    moved = np.moveaxis(np.asarray(repr_, dtype=np.float64), -3, -1)
    return moved.reshape(-1, moved.shape[-1])


def _mine_rows(Q: np.ndarray, R: np.ndarray, Yf: np.ndarray, k: int) -> np.ndarray:
    """Top-k mean over one block of query rows; (q, D) x (M, D) -> (q, C)."""
    dist = np.zeros((Q.shape[0], R.shape[0]), dtype=np.float64)
    for d in range(Q.shape[1]):
        dist += np.abs(Q[:, d, None] - R[None, :, d])

    kth = np.partition(dist, k - 1, axis=1)[:, k - 1:k]
    less = dist < kth
    ties = dist == kth
    need = k - less.sum(axis=1, keepdims=True)
    chosen = less | (ties & (np.cumsum(ties, axis=1) <= need))
    cols = np.nonzero(chosen)[1].reshape(Q.shape[0], k)

    # ascending distance, then ascending index
    order = np.argsort(np.take_along_axis(dist, cols, axis=1), axis=1, kind="stable")
    selected = np.take_along_axis(cols, order, axis=1)
    acc = np.zeros((Q.shape[0], Yf.shape[1]), dtype=np.float64)
    for r in range(k):
        acc += Yf[selected[:, r]]
    return acc / k


def mine_topk(query: np.ndarray, demo_repr: np.ndarray, demo_y: np.ndarray, k: int,
              chunk: int = ICL_CHUNK, max_workers: Optional[int] = None) -> np.ndarray:
    """
    Aggregates true demo solutions for one query.

    Args:
        query (np.ndarray): Query representation (T, D, H, W).
        demo_repr (np.ndarray): Demo representations (J, T, D, H, W).
        demo_y (np.ndarray): True demo solutions (J, T, C, H, W).
        k (int): Number of nearest demo locations, 1 <= k <= J*T*H*W.
        chunk (int): Query locations per distance block; peak memory is chunk x J*T*H*W.

    Returns:
        np.ndarray: (T, C, H, W) float64 prediction.
    """
    if query.ndim != 4 or demo_repr.ndim != 5 or demo_y.ndim != 5:
        raise ShapeError(f"bad ranks: query {query.shape}, demos {demo_repr.shape}, solutions {demo_y.shape}")
    T, D, H, W = query.shape
    if demo_repr.shape[1:] != (T, D, H, W) or demo_y.shape[0] != demo_repr.shape[0] \
            or demo_y.shape[1] != T or demo_y.shape[3:] != (H, W):
        raise ShapeError(f"query {query.shape} vs demos {demo_repr.shape} / solutions {demo_y.shape}")
    M = demo_repr.shape[0] * T * H * W
    if not 1 <= k <= M:
        raise DemoError(f"k = {k} outside [1, {M}] demo locations")
    if chunk < 1:
        raise ConfigError(f"query chunk must be >= 1, got {chunk}")

    Q = _locations(query)
    R = _locations(demo_repr)
    Yf = _locations(demo_y)
    starts = list(range(0, Q.shape[0], chunk))
    blocks = run_indexed_jobs(lambda s: _mine_rows(Q[s:s + chunk], R, Yf, k), starts,
                              max_workers=max_workers, label="distance block")
    out = np.concatenate(blocks).reshape(T, H, W, -1)
    return np.moveaxis(out, -1, 1)


class DemoCache:
    """Demo representations keyed by (operator, source, demo fingerprint); computed once per demo set."""

    def __init__(self):
        self._store: Dict[Tuple[int, str, str], np.ndarray] = {}

    def get(self, op, source: str, demos: DemoSet) -> np.ndarray:
        key = (id(op), source, fingerprint(demos.dataset))
        if key not in self._store:
            self._store[key] = representation(op, demos.dataset, source)
        return self._store[key]

    def __len__(self):
        return len(self._store)


def representation(op, dataset: Dataset, source: str) -> np.ndarray:
    """
    Per-location vectors the distance is taken over, shaped (n, T, D, H, W).

    model_output: the physical-unit prediction, D = C_out.
    backbone_feature: activations before the final projection, D = projection
    width, shared by every output frame of a location.
    """
    task = op.task
    if task.kind == "next_step":
        raise DemoError("demo mining needs a static or one-shot operator")
    if source == "model_output":
        return op.predict_frames(dataset)
    if source == "backbone_feature":
        feats = op.features(dataset)
        return np.repeat(feats[:, None], task.t_out, axis=1)
    raise ConfigError(f"similarity source must be one of {SOURCES}, got '{source}'")


def predict_with_demos(op, query: Dataset, demos: DemoSet, config: IclConfig,
                       cache: Optional[DemoCache] = None) -> np.ndarray:
    """
    Demo-aggregated predictions for every query sample, (n, T, C_out, H, W).

    Aggregation always uses the true demo solutions, whatever the similarity source.
    """
    q_repr = representation(op, query, config.source)
    d_repr = cache.get(op, config.source, demos) if cache is not None else representation(op, demos.dataset, config.source)
    Y = demos.Y
    if Y.shape[1] != op.task.t_out or Y.shape[2] != op.task.out_channels:
        raise ShapeError(f"demo solutions {Y.shape} do not match the operator output "
                         f"({op.task.t_out} frames x {op.task.out_channels} channels)")
    logging.debug(f"mining {query.n} queries against {demos.J} demos (k={config.k}, source={config.source})")
    return np.stack([mine_topk(q_repr[i], d_repr, Y, config.k, config.chunk) for i in range(query.n)])


def model_space(frames: np.ndarray) -> np.ndarray:
    """(n, T, C, H, W) -> (n, T*C, H, W), the layout the evaluation metric uses."""
    n, T, C, H, W = frames.shape
    return frames.reshape(n, T * C, H, W)
