"""
自回归滚动预测 (Autoregressive rollout) of next-step forecasters.
"""
import logging
from typing import Callable, List, Tuple

import numpy as np

from finetune.ft_metrics import relative_l2
from utils.errors import RolloutError, ShapeError


def rollout(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    window: np.ndarray,
    steps: int,
    truth: np.ndarray,
) -> Tuple[np.ndarray, List[float]]:
    """
    Feeds each prediction back as the newest frame, dropping the oldest one.

    Args:
        predict_fn: Maps a (B, t_in, C, H, W) window to the next frame, (B, C, H, W) or (B, 1, C, H, W).
        window (np.ndarray): Initial window (B, t_in, C, H, W).
        steps (int): Number of forecast steps.
        truth (np.ndarray): Ground-truth future frames (B, T_truth, C, H, W), T_truth >= steps.

    Returns:
        Tuple[np.ndarray, List[float]]: Predicted trajectory (B, steps, C, H, W)
        and the relative L2 error of every step.
    """
    if window.ndim != 5:
        raise ShapeError(f"rollout window must be (B, t_in, C, H, W), got {window.shape}")
    if steps < 1:
        raise RolloutError(f"rollout needs at least one step, got {steps}")
    if truth.ndim != 5 or truth.shape[1] < steps:
        raise RolloutError(f"ground truth has {truth.shape[1] if truth.ndim == 5 else 0} frames, rollout asks for {steps}")

    current = np.asarray(window, dtype=np.float64)
    frames, errors = [], []
    for s in range(steps):
        nxt = np.asarray(predict_fn(current), dtype=np.float64)
        if nxt.ndim == 5:
            nxt = nxt[:, 0]
        if nxt.shape != current.shape[:1] + current.shape[2:]:
            raise ShapeError(f"forecaster returned {nxt.shape}, expected {current.shape[:1] + current.shape[2:]}")
        frames.append(nxt)
        errors.append(relative_l2(nxt, truth[:, s]))
        current = np.concatenate([current[:, 1:], nxt[:, None]], axis=1)
    logging.debug(f"rollout errors: {[round(e, 4) for e in errors]}")
    return np.stack(frames, axis=1), errors


def rollout_dataset(op, dataset, steps: int) -> Tuple[np.ndarray, List[float]]:
    """Rolls a trained next-step operator from every sample's input window against its stored solution frames."""
    if not dataset.labeled:
        raise RolloutError(f"dataset '{dataset.pde}' has no ground-truth frames")
    window = dataset.inputs[:, -op.task.t_in:]
    return rollout(op.step, window, steps, dataset.solutions)
