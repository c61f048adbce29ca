"""
时间打包适配器 (Time-bundled forecasting adapter).

Trajectories are folded into channels so a 2D FNO can serve time-dependent
tasks:

    static     (T=1, C)            -> C input channels,         solution C_out channels
    next_step  (T_in, C) window    -> T_in*C input channels,    next frame C channels
    one_shot   w0 repeated T times -> T*(C+3) input channels,   T*C_out output channels
               (each frame carries x, y, t mesh channels)
"""
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from datamodel.dm_ops import coordinate_channels
from datamodel.dm_types import Dataset, Grid2D
from diffcore.dc_tensor import Tensor
from utils.errors import ConfigError, ShapeError

TASK_KINDS = ("static", "next_step", "one_shot")


@dataclass
class TaskSpec:
    kind: str = "static"
    channels: int = 1
    out_channels: int = 1
    t_in: int = 1
    t_out: int = 1

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got '{self.kind}'")
        if min(self.channels, self.out_channels, self.t_in, self.t_out) < 1:
            raise ConfigError(f"task sizes must be positive: {asdict(self)}")

    @property
    def model_in(self) -> int:
        if self.kind == "one_shot":
            return self.t_out * (self.channels + 3)
        return self.t_in * self.channels

    @property
    def model_out(self) -> int:
        return self.t_out * self.out_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["TaskSpec"]:
        return cls(**d) if d else None

    @classmethod
    def for_dataset(cls, dataset: Dataset, kind: Optional[str] = None, t_in: Optional[int] = None,
                    t_out: Optional[int] = None) -> "TaskSpec":
        """
        Default task for a PDE family: static (poisson, helmholtz), next_step (rd), one_shot (ns).

        Unlabeled snapshot sets cannot tell the window length or the number of
        output frames, so pretraining passes t_in / t_out explicitly.
        """
        kind = kind or {"rd": "next_step", "ns": "one_shot"}.get(dataset.pde, "static")
        out_channels = len(dataset.solution_channels) or dataset.C
        if kind == "next_step":
            return cls(kind, dataset.C, dataset.C, t_in=t_in or dataset.T, t_out=1)
        if kind == "one_shot":
            frames = t_out or (dataset.solutions.shape[1] if dataset.labeled else 1)
            return cls(kind, dataset.C, out_channels, t_in=1, t_out=frames)
        return cls(kind, dataset.C, out_channels, t_in=1, t_out=1)


def fold_time(traj: np.ndarray) -> np.ndarray:
    """(B, T, C, H, W) -> (B, T*C, H, W)."""
    if traj.ndim != 5:
        raise ShapeError(f"fold_time expects (B, T, C, H, W), got {traj.shape}")
    B, T, C, H, W = traj.shape
    return traj.reshape(B, T * C, H, W)


def unfold_time(x: np.ndarray, T: int, C: int) -> np.ndarray:
    """(B, T*C, H, W) -> (B, T, C, H, W)."""
    if x.ndim != 4 or x.shape[1] != T * C:
        raise ShapeError(f"cannot unfold {x.shape} into T={T}, C={C}")
    B, _, H, W = x.shape
    return x.reshape(B, T, C, H, W)


def one_shot_inputs(w0: np.ndarray, T: int, grid: Grid2D) -> np.ndarray:
    """
    Repeats the initial state over T frames and appends (x, y, t) mesh channels.

    w0: (B, 1, C, H, W) -> (B, T*(C+3), H, W), times t_k = k / T.
    """
    if w0.ndim != 5 or w0.shape[1] != 1:
        raise ShapeError(f"one-shot inputs need a single initial frame, got {w0.shape}")
    B, _, C, H, W = w0.shape
    coords = coordinate_channels(grid, [k / T for k in range(T)])
    frames = np.broadcast_to(w0, (B, T, C, H, W))
    stacked = np.concatenate([frames, np.broadcast_to(coords[None], (B,) + coords.shape)], axis=2)
    return fold_time(np.ascontiguousarray(stacked, dtype=np.float32))


def next_step_windows(inputs: np.ndarray, solutions: Optional[np.ndarray], t_in: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Every sliding (t_in -> 1) window of each full trajectory, trajectory-major.

    Returns:
        X (M, t_in*C, H, W) and Y (M, C, H, W).
    """
    full = inputs if solutions is None else np.concatenate([inputs, solutions], axis=1)
    B, T, C, H, W = full.shape
    if T <= t_in:
        raise ShapeError(f"trajectory of {T} frames has no window of {t_in} inputs")
    xs, ys = [], []
    for b in range(B):
        for j in range(T - t_in):
            xs.append(full[b, j:j + t_in].reshape(t_in * C, H, W))
            ys.append(full[b, j + t_in])
    return np.stack(xs), np.stack(ys)


def model_inputs(dataset: Dataset, task: TaskSpec) -> np.ndarray:
    """
    Model-space inputs for a dataset. Single unlabeled snapshots (T = 1) are
    repeated over the t_in input frames of a next-step task.
    """
    x = dataset.inputs
    if task.kind == "static":
        if x.shape[1] != 1:
            raise ShapeError(f"static task expects T=1 inputs, got T={x.shape[1]}")
        return x[:, 0]
    if task.kind == "one_shot":
        return one_shot_inputs(x[:, :1], task.t_out, dataset.grid)
    if x.shape[1] == 1:
        x = np.repeat(x, task.t_in, axis=1)
    if x.shape[1] != task.t_in:
        raise ShapeError(f"next-step task expects T={task.t_in} inputs, got T={x.shape[1]}")
    return fold_time(x)


def supervised_pairs(dataset: Dataset, task: TaskSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(X, Y) training pairs in model space; next-step tasks use every window."""
    if not dataset.labeled:
        raise ShapeError(f"dataset '{dataset.pde}' is unlabeled")
    if task.kind == "next_step":
        return next_step_windows(dataset.inputs, dataset.solutions, task.t_in)
    if task.kind == "one_shot":
        return model_inputs(dataset, task), fold_time(dataset.solutions)
    return model_inputs(dataset, task), dataset.solutions[:, 0]


def physical_channel_mask(task: TaskSpec, physical: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean mask over model input channels marking physical (non-coordinate) ones."""
    per_frame = np.ones(task.channels, dtype=bool) if physical is None else np.asarray(physical, dtype=bool)
    if task.kind == "one_shot":
        per_frame = np.concatenate([per_frame, np.zeros(3, dtype=bool)])
        return np.tile(per_frame, task.t_out)
    return np.tile(per_frame, task.t_in)


class TimeBundledAdapter:
    """Wraps a 2D FNO so it consumes and produces trajectories."""

    def __init__(self, model, task: TaskSpec, grid: Grid2D):
        if model.config.in_channels != task.model_in or model.config.out_channels != task.model_out:
            raise ShapeError(
                f"model maps {model.config.in_channels}->{model.config.out_channels} channels, "
                f"task needs {task.model_in}->{task.model_out}"
            )
        self.model = model
        self.task = task
        self.grid = grid

    def __call__(self, trajectory: np.ndarray) -> np.ndarray:
        """(B, T, C, H, W) in -> (B, T_out, C_out, H, W) out."""
        task = self.task
        if task.kind == "one_shot":
            x = one_shot_inputs(trajectory[:, :1], task.t_out, self.grid)
        else:
            x = fold_time(trajectory[:, -task.t_in:]) if task.kind == "next_step" else trajectory[:, 0]
        out = self.model(Tensor(x.astype(self.model.config.np_dtype))).data
        return unfold_time(out, task.t_out, task.out_channels)
