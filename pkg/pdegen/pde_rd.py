"""
FitzHugh-Nagumo reaction-diffusion on [-1, 1]^2 with zero-flux boundaries.

    du/dt = Du lap u + u - u^3 - k - v
    dv/dt = Dv lap v + u - v

Classic RK4 in time, 5-point finite-difference Laplacian. Edge replication
('nearest') gives the zero-flux ghost cells of a cell-centered grid.
"""
import logging
import math

import numpy as np
from scipy import ndimage

from datamodel.dm_types import Grid2D, Trajectory, rd_grid
from pdegen.pde_params import RdParams
from utils.constant import RD_STABILITY_SAFETY
from utils.errors import ShapeError, SolverError

_STENCIL = np.array([1.0, -2.0, 1.0])


def laplacian_neumann(a: np.ndarray, hy: float, hx: float) -> np.ndarray:
    return (
        ndimage.correlate1d(a, _STENCIL, axis=-2, mode="nearest") / hy ** 2
        + ndimage.correlate1d(a, _STENCIL, axis=-1, mode="nearest") / hx ** 2
    )


def reaction(u: np.ndarray, v: np.ndarray, k: float):
    return u - u ** 3 - k - v, u - v


def stability_bound(params: RdParams, grid: Grid2D) -> float:
    """Largest admissible explicit step, h^2 / (4 max(Du, Dv)) times the safety factor."""
    d = max(params.du, params.dv)
    if d == 0:
        return math.inf
    h = min(grid.spacing)
    return h * h / (4.0 * d) * RD_STABILITY_SAFETY


def fixed_point(k: float) -> float:
    """Spatially uniform equilibrium u = v = (-k)^(1/3)."""
    return float(np.cbrt(-k))


def simulate_rd(
    u0: np.ndarray,
    v0: np.ndarray,
    params: RdParams,
    t_final: float | None = None,
    record_stride: int | None = None,
    grid: Grid2D | None = None,
) -> Trajectory:
    """
    Integrates from (u0, v0) to t_final, recording frame 0 and every record_stride-th step.

    Returns:
        Trajectory: frames (T, 2, H, W) in float64, channels (u, v).
    """
    u = np.array(u0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    if u.ndim != 2 or u.shape != v.shape:
        raise ShapeError(f"u0/v0 must be matching (H, W) fields, got {u.shape} and {v.shape}")
    grid = grid or rd_grid(*u.shape)
    t_final = params.t_final if t_final is None else t_final
    stride = params.record_stride if record_stride is None else record_stride
    dt = params.dt

    bound = stability_bound(params, grid)
    if dt > bound:
        raise SolverError(f"dt={dt} violates the explicit stability bound {bound:.3e}")
    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise SolverError(f"t_final={t_final} is not a whole number of steps of dt={dt}")
    if n_steps % stride:
        raise SolverError(f"{n_steps} steps are not a multiple of the record stride {stride}")

    hy, hx = grid.spacing

    def rhs(a, b):
        ra, rb = reaction(a, b, params.k)
        if params.du:
            ra = ra + params.du * laplacian_neumann(a, hy, hx)
        if params.dv:
            rb = rb + params.dv * laplacian_neumann(b, hy, hx)
        return ra, rb

    frames = [np.stack([u, v])]
    for step in range(1, n_steps + 1):
        k1u, k1v = rhs(u, v)
        k2u, k2v = rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v)
        k3u, k3v = rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v)
        k4u, k4v = rhs(u + dt * k3u, v + dt * k3v)
        u = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if step % stride == 0:
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise SolverError(f"reaction-diffusion state diverged at t={step * dt:.4f}")
            frames.append(np.stack([u, v]))

    logging.debug(f"RD: {n_steps} RK4 steps, {len(frames)} frames")
    return Trajectory(np.stack(frames), grid, dt_record=dt * stride)
