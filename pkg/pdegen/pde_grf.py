"""
Gaussian random fields on the periodic grid, sampled spectrally.

u = Re(ifft2(A * fft2(xi))) for real white noise xi, with
A_k = sigma0 * (4 pi^2 |k|^2 + tau^2)^(-alpha/2) and A_0 = 0. The transform of
real noise supplies unit-normal complex coefficients with Hermitian symmetry.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from datamodel.dm_types import Field, Grid2D
from utils.constant import GRF_ALPHA, GRF_TAU
from utils.errors import ConfigError


@dataclass(frozen=True)
class GrfSpec:
    alpha: float = GRF_ALPHA
    tau: float = GRF_TAU
    # None scales the field to unit pointwise variance
    sigma0: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 1:
            raise ConfigError(f"GRF alpha must exceed 1, got {self.alpha}")
        if not self.tau > 0:
            raise ConfigError(f"GRF tau must be positive, got {self.tau}")


def wavenumbers(grid: Grid2D):
    """Full-spectrum wavenumbers (ky, kx) in cycles per unit length."""
    Ly, Lx = grid.lengths
    ky = np.fft.fftfreq(grid.H, d=Ly / grid.H)
    kx = np.fft.fftfreq(grid.W, d=Lx / grid.W)
    return np.meshgrid(ky, kx, indexing="ij")


def _unit_amplitudes(spec: GrfSpec, grid: Grid2D) -> np.ndarray:
    KY, KX = wavenumbers(grid)
    amp = (4.0 * np.pi ** 2 * (KX ** 2 + KY ** 2) + spec.tau ** 2) ** (-spec.alpha / 2.0)
    amp[0, 0] = 0.0
    return amp


def grf_amplitudes(spec: GrfSpec, grid: Grid2D) -> np.ndarray:
    amp = _unit_amplitudes(spec, grid)
    if spec.sigma0 is None:
        return amp / np.sqrt(np.sum(amp ** 2) / amp.size)
    return spec.sigma0 * amp


def grf_variance(spec: GrfSpec, grid: Grid2D) -> float:
    """Analytic pointwise variance, the sum of spectral variances over N."""
    amp = grf_amplitudes(spec, grid)
    return float(np.sum(amp ** 2) / amp.size)


def sample_grf(spec: GrfSpec, grid: Grid2D, seed: int) -> Field:
    """One zero-mean real draw as a 1-channel float64 Field."""
    noise = np.random.default_rng(seed).standard_normal(grid.shape)
    u = np.real(np.fft.ifft2(grf_amplitudes(spec, grid) * np.fft.fft2(noise)))
    return Field(u[None], grid)
