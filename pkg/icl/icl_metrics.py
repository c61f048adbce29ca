import numpy as np
from scipy import stats

from utils.errors import DegenerateTargetError, ShapeError


def scale_slope(pred: np.ndarray, target: np.ndarray) -> float:
    """Least-squares slope a of pred ~ a * target + b over every location; 1 is ideal."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"scale_slope: {np.shape(pred)} vs {np.shape(target)}")
    if p.size < 2:
        raise ShapeError("scale_slope needs at least two points")
    if np.ptp(t) == 0:
        raise DegenerateTargetError("scale_slope: target has zero variance")
    return float(stats.linregress(t, p).slope)


def shape_error(pred: np.ndarray, target: np.ndarray) -> float:
    """MSE after dividing each field by its own largest magnitude."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"shape_error: {p.shape} vs {t.shape}")
    pm, tm = np.max(np.abs(p)), np.max(np.abs(t))
    if pm == 0 or tm == 0:
        raise DegenerateTargetError("shape_error: all-zero input")
    return float(np.mean((p / pm - t / tm) ** 2))
