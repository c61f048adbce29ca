import hashlib
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from datamodel.dm_types import COORDINATE, ChannelSpec, Dataset, Grid2D
from utils.errors import ConfigError, ShapeError


def pad_channels(array: np.ndarray, channels: int, axis: int = -3) -> np.ndarray:
    """Zero-pads the channel axis up to `channels`; more channels than that is an error."""
    have = array.shape[axis]
    if have > channels:
        raise ShapeError(f"cannot pad {have} channels down to {channels}")
    if have == channels:
        return array
    widths = [(0, 0)] * array.ndim
    widths[axis] = (0, channels - have)
    return np.pad(array, widths)


def dataset_union(datasets: Sequence[Dataset]) -> Dataset:
    """
    Concatenates datasets that share a resolution, zero-filling missing channels.

    Channel specs come from the first dataset with the most channels. The union
    is labeled only when every member is labeled with matching solution shapes.
    """
    if not datasets:
        raise ShapeError("dataset_union needs at least one dataset")
    first = datasets[0]
    if len(datasets) == 1:
        return first.subset(range(first.n))

    for ds in datasets[1:]:
        if ds.grid.shape != first.grid.shape:
            raise ShapeError(f"resolution mismatch: {first.grid.shape} vs {ds.grid.shape}")
        if ds.T != first.T:
            raise ShapeError(f"time-axis mismatch: T={first.T} vs T={ds.T}")

    widest = max(datasets, key=lambda d: d.C)
    C = widest.C
    inputs = np.concatenate([pad_channels(ds.inputs, C) for ds in datasets], axis=0)

    solutions, solution_channels = None, []
    sol_shapes = {ds.solutions.shape[1:] if ds.labeled else None for ds in datasets}
    if len(sol_shapes) == 1 and None not in sol_shapes:
        solutions = np.concatenate([ds.solutions for ds in datasets], axis=0)
        solution_channels = list(first.solution_channels)
    elif any(ds.labeled for ds in datasets):
        logging.warning("dataset_union: members disagree on solutions; the union is unlabeled")

    names = []
    for ds in datasets:
        if ds.pde not in names:
            names.append(ds.pde)
    ranges = {}
    for ds in datasets:
        ranges.update(ds.param_ranges)

    return Dataset(
        pde="+".join(names),
        grid=first.grid,
        channels=list(widest.channels),
        inputs=inputs,
        params=[dict(p) for ds in datasets for p in ds.params],
        solutions=solutions,
        solution_channels=solution_channels,
        provenance=[p for ds in datasets for p in ds.provenance],
        seed=first.seed,
        param_ranges=ranges,
        dt_record=first.dt_record,
    )


def split_sizes(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    if len(fractions) != 3:
        raise ConfigError(f"split needs three fractions, got {len(fractions)}")
    if any(f < 0 or f > 1 for f in fractions):
        raise ConfigError(f"split fractions must lie in [0, 1], got {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    n_train = min(n, int(np.floor(fractions[0] * n + 0.5)))
    n_val = min(n - n_train, int(np.floor(fractions[1] * n + 0.5)))
    return n_train, n_val, n - n_train - n_val


def split(dataset: Dataset, fractions: Sequence[float], seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint and exhaustive (train, val, test) partition."""
    n_train, n_val, _ = split_sizes(dataset.n, fractions)
    order = np.random.default_rng(seed).permutation(dataset.n)
    return (
        dataset.subset(order[:n_train]),
        dataset.subset(order[n_train:n_train + n_val]),
        dataset.subset(order[n_train + n_val:]),
    )


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["degenerate"], dtype=bool))

    def padded(self, channels: int) -> "ChannelStats":
        extra = channels - len(self.mean)
        if extra <= 0:
            return self
        return ChannelStats(
            np.concatenate([self.mean, np.zeros(extra)]),
            np.concatenate([self.std, np.ones(extra)]),
            np.concatenate([self.degenerate, np.ones(extra, dtype=bool)]),
        )


def channel_stats(data: Dataset | np.ndarray) -> ChannelStats:
    """
    Per-channel mean/std in float64 over every axis except the channel axis (-3).

    Channels with zero spread are flagged degenerate and later passed through.
    """
    arr = data.inputs if isinstance(data, Dataset) else np.asarray(data)
    C = arr.shape[-3]
    flat = np.moveaxis(arr.astype(np.float64), -3, 0).reshape(C, -1)
    mean = flat.mean(axis=1)
    std = flat.std(axis=1)
    degenerate = ~(std > 0)
    for c in np.flatnonzero(degenerate):
        logging.warning(f"channel {c} has zero spread; it is passed through unnormalized")
    return ChannelStats(mean=mean, std=std, degenerate=degenerate)


def _broadcast(stats: ChannelStats):
    shape = (-1, 1, 1)
    mean = np.where(stats.degenerate, 0.0, stats.mean).reshape(shape)
    std = np.where(stats.degenerate, 1.0, stats.std).reshape(shape)
    return mean, std


def normalize(array: np.ndarray, stats: ChannelStats) -> np.ndarray:
    if array.shape[-3] != len(stats.mean):
        raise ShapeError(f"{array.shape[-3]} channels vs stats for {len(stats.mean)}")
    mean, std = _broadcast(stats)
    return ((array.astype(np.float64) - mean) / std).astype(array.dtype)


def denormalize(array: np.ndarray, stats: ChannelStats) -> np.ndarray:
    if array.shape[-3] != len(stats.mean):
        raise ShapeError(f"{array.shape[-3]} channels vs stats for {len(stats.mean)}")
    mean, std = _broadcast(stats)
    return (array.astype(np.float64) * std + mean).astype(array.dtype)


def normalize_dataset(dataset: Dataset, stats: ChannelStats | None = None) -> Tuple[Dataset, ChannelStats]:
    stats = stats or channel_stats(dataset)
    out = dataset.subset(range(dataset.n))
    out.inputs = normalize(out.inputs, stats)
    return out, stats


def coordinate_channels(grid: Grid2D, times: Sequence[float] | None = None) -> np.ndarray:
    """
    Linear mesh embeddings: (2, H, W) of (x, y), or (T, 3, H, W) of (x, y, t) when times are given.
    """
    Y, X = grid.coordinates()
    xy = np.stack([X, Y]).astype(np.float32)
    if times is None:
        return xy
    frames = [np.concatenate([xy, np.full((1,) + grid.shape, t, dtype=np.float32)]) for t in times]
    return np.stack(frames)


def coordinate_specs(with_time: bool) -> List[ChannelSpec]:
    specs = [ChannelSpec("x", COORDINATE), ChannelSpec("y", COORDINATE)]
    if with_time:
        specs.append(ChannelSpec("t", COORDINATE))
    return specs


def fingerprint(dataset: Dataset) -> str:
    """Content hash of inputs, solutions and the PDE name."""
    h = hashlib.sha256(dataset.pde.encode("utf-8"))
    h.update(np.ascontiguousarray(dataset.inputs).tobytes())
    if dataset.solutions is not None:
        h.update(np.ascontiguousarray(dataset.solutions).tobytes())
    return h.hexdigest()[:16]
