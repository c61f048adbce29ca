"""
重建代理任务 (Reconstruction proxy tasks) on unlabeled inputs.

    masking: round(ratio * units) pixels or p x p patches, chosen uniformly
             without replacement, are set to the fill value in every physical
             channel (one spatial pattern shared by all channels)
    blur:    separable Gaussian filter, periodic, kernel radius ceil(3 sigma),
             weights renormalized to unit sum

Both act on model-space fields (C, H, W); coordinate channels are left alone.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from utils.errors import ConfigError, ShapeError


@dataclass
class MaskSpec:
    ratio: float = 0.0
    patch: int = 1
    fill: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"mask ratio must be in [0, 1], got {self.ratio}")
        if self.patch < 1:
            raise ConfigError(f"mask patch must be >= 1, got {self.patch}")

    def units(self, H: int, W: int) -> Tuple[int, int]:
        if H % self.patch or W % self.patch:
            raise ConfigError(f"mask patch {self.patch} does not divide the {H}x{W} grid")
        return H // self.patch, W // self.patch


@dataclass
class BlurSpec:
    sigma_min: float = 0.0
    sigma_max: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.sigma_min <= self.sigma_max:
            raise ConfigError(f"blur range needs 0 <= sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]")

    def sample(self, rng: np.random.Generator) -> float:
        if self.sigma_max == self.sigma_min:
            return float(self.sigma_min)
        return float(rng.uniform(self.sigma_min, self.sigma_max))


def mask_count(spec: MaskSpec, H: int, W: int) -> int:
    gh, gw = spec.units(H, W)
    return int(math.floor(spec.ratio * gh * gw + 0.5))


def _channel_mask(C: int, channel_mask: Optional[np.ndarray]) -> np.ndarray:
    if channel_mask is None:
        return np.ones(C, dtype=bool)
    channel_mask = np.asarray(channel_mask, dtype=bool)
    if channel_mask.shape != (C,):
        raise ShapeError(f"channel mask of shape {channel_mask.shape} for {C} channels")
    return channel_mask


def apply_mask(field: np.ndarray, spec: MaskSpec, seed: int,
               channel_mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Masks a (C, H, W) field.

    Args:
        field (np.ndarray): Model-space sample.
        spec (MaskSpec): Ratio, granularity and fill value.
        seed (int): Seed of the mask pattern.
        channel_mask (np.ndarray | None): True for physical channels; others are untouched.

    Returns:
        Tuple[np.ndarray, np.ndarray]: The masked copy and the (H, W) boolean mask.
    """
    if field.ndim != 3:
        raise ShapeError(f"apply_mask expects (C, H, W), got {field.shape}")
    C, H, W = field.shape
    gh, gw = spec.units(H, W)
    count = mask_count(spec, H, W)
    out = field.copy()
    if count == 0:
        return out, np.zeros((H, W), dtype=bool)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(gh * gw, size=count, replace=False)
    coarse = np.zeros(gh * gw, dtype=bool)
    coarse[chosen] = True
    mask = np.kron(coarse.reshape(gh, gw), np.ones((spec.patch, spec.patch), dtype=bool)).astype(bool)

    for c in np.flatnonzero(_channel_mask(C, channel_mask)):
        out[c][mask] = spec.fill
    return out, mask


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Taps at offsets -r..r with r = ceil(3 sigma), summing to one. sigma = 0 gives [1]."""
    if sigma < 0:
        raise ConfigError(f"blur sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    r = int(math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_transfer(sigma: float, n: int) -> np.ndarray:
    """
    Discrete transfer function of the periodic kernel on an axis of length n,
    at the rfft frequencies 0..n//2. Taps beyond the period wrap around.
    """
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    circular = np.zeros(n)
    np.add.at(circular, np.arange(-r, r + 1) % n, k)
    # symmetric kernel: the transform is real
    return np.fft.rfft(circular).real


def apply_blur(field: np.ndarray, sigma: float, channel_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Separable periodic Gaussian blur of a (C, H, W) field; sigma = 0 returns an exact copy."""
    if field.ndim != 3:
        raise ShapeError(f"apply_blur expects (C, H, W), got {field.shape}")
    if sigma < 0:
        raise ConfigError(f"blur sigma must be >= 0, got {sigma}")
    out = field.copy()
    if sigma == 0:
        return out
    C, H, W = field.shape
    physical = np.flatnonzero(_channel_mask(C, channel_mask))
    if physical.size == 0:
        return out

    x = field[physical].astype(np.float64)
    x = np.fft.irfft(np.fft.rfft(x, axis=-1) * blur_transfer(sigma, W), n=W, axis=-1)
    x = np.fft.irfft(np.fft.rfft(x, axis=-2) * blur_transfer(sigma, H)[:, None], n=H, axis=-2)
    out[physical] = x.astype(field.dtype)
    return out
