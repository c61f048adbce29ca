"""
Spectral solvers for the periodic Poisson and screened (Helmholtz) problems.

Poisson:   -div(K grad u) = f,  u_hat = f_hat / (4 pi^2 (K11 kx^2 + 2 K12 kx ky + K22 ky^2)), u_hat(0) = 0
Helmholtz: -lap u + omega u = f, u_hat = f_hat / (4 pi^2 |k|^2 + omega)

On even grids the cross term is dropped on the Nyquist row and column, where
kx ky has no Hermitian partner; the apply_* functions share the same symbols,
so solve and apply are exact inverses.
"""
import numpy as np

from datamodel.dm_types import Grid2D
from pdegen.pde_grf import wavenumbers
from pdegen.pde_params import HelmholtzParams, PoissonParams
from utils.errors import ShapeError


def _grid_for(f: np.ndarray, grid: Grid2D | None) -> Grid2D:
    if f.ndim != 2:
        raise ShapeError(f"expected a single (H, W) field, got {f.shape}")
    grid = grid or Grid2D(*f.shape)
    if f.shape != grid.shape:
        raise ShapeError(f"field {f.shape} does not match grid {grid.shape}")
    return grid


def poisson_symbol(params: PoissonParams, grid: Grid2D) -> np.ndarray:
    KY, KX = wavenumbers(grid)
    cross = KX * KY
    cross[grid.H // 2, :] = 0.0
    cross[:, grid.W // 2] = 0.0
    return 4.0 * np.pi ** 2 * (params.k11 * KX ** 2 + 2.0 * params.k12 * cross + params.k22 * KY ** 2)


def helmholtz_symbol(params: HelmholtzParams, grid: Grid2D) -> np.ndarray:
    KY, KX = wavenumbers(grid)
    return 4.0 * np.pi ** 2 * (KX ** 2 + KY ** 2) + params.omega


def solve_poisson(params: PoissonParams, f: np.ndarray, grid: Grid2D | None = None) -> np.ndarray:
    """Zero-mean solution; the mean of f is dropped with the zero mode."""
    grid = _grid_for(f, grid)
    symbol = poisson_symbol(params, grid)
    symbol[0, 0] = 1.0
    u_hat = np.fft.fft2(f) / symbol
    u_hat[0, 0] = 0.0
    return np.real(np.fft.ifft2(u_hat))


def apply_poisson(params: PoissonParams, u: np.ndarray, grid: Grid2D | None = None) -> np.ndarray:
    grid = _grid_for(u, grid)
    return np.real(np.fft.ifft2(poisson_symbol(params, grid) * np.fft.fft2(u)))


def solve_helmholtz(params: HelmholtzParams, f: np.ndarray, grid: Grid2D | None = None) -> np.ndarray:
    grid = _grid_for(f, grid)
    return np.real(np.fft.ifft2(np.fft.fft2(f) / helmholtz_symbol(params, grid)))


def apply_helmholtz(params: HelmholtzParams, u: np.ndarray, grid: Grid2D | None = None) -> np.ndarray:
    grid = _grid_for(u, grid)
    return np.real(np.fft.ifft2(helmholtz_symbol(params, grid) * np.fft.fft2(u)))


def relative_residual(lu: np.ndarray, f: np.ndarray) -> float:
    """||L u - f|| / ||f||."""
    return float(np.linalg.norm(lu - f) / np.linalg.norm(f))
