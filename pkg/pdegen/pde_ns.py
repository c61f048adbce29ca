"""
Pseudo-spectral 2D incompressible Navier-Stokes in vorticity form on the unit torus.

    dw/dt + v . grad w = nu lap w + f,   lap psi = -w,   v = (d psi/dy, -d psi/dx)

The state lives in the half spectrum. Advection and forcing are explicit
(Heun predictor/corrector), viscosity is Crank-Nicolson. The nonlinear term is
dealiased with the 2/3 rule. Every record interval is split into equal steps no
longer than the CFL step and the configured cap.
"""
import logging
import math

import numpy as np

from datamodel.dm_types import Grid2D, Trajectory
from pdegen.pde_params import NsParams
from utils.errors import ShapeError, SolverError


class SpectralOps:
    """Half-spectrum wavenumbers and masks for one grid."""

    def __init__(self, grid: Grid2D, dealias: float = 2.0 / 3.0):
        H, W = grid.shape
        Ly, Lx = grid.lengths
        ky_int = np.fft.fftfreq(H, d=1.0 / H)
        kx_int = np.fft.rfftfreq(W, d=1.0 / W)
        KYI, KXI = np.meshgrid(ky_int, kx_int, indexing="ij")

        self.grid = grid
        self.k2 = (2 * np.pi * KXI / Lx) ** 2 + (2 * np.pi * KYI / Ly) ** 2
        self.inv_k2 = np.zeros_like(self.k2)
        self.inv_k2[self.k2 > 0] = 1.0 / self.k2[self.k2 > 0]
        # derivative wavenumbers with the Nyquist modes removed
        kx_d = np.where(np.abs(KXI) == W // 2, 0.0, 2 * np.pi * KXI / Lx)
        ky_d = np.where(np.abs(KYI) == H // 2, 0.0, 2 * np.pi * KYI / Ly)
        self.ikx = 1j * kx_d
        self.iky = 1j * ky_d
        self.dealias = (np.abs(KXI) < dealias * (W // 2)) & (np.abs(KYI) < dealias * (H // 2))

    def to_physical(self, a_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(a_hat, s=self.grid.shape)

    def to_spectral(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(a)

    def velocity(self, w_hat: np.ndarray):
        psi_hat = w_hat * self.inv_k2
        return self.to_physical(self.iky * psi_hat), self.to_physical(-self.ikx * psi_hat)

    def advection(self, w_hat: np.ndarray) -> np.ndarray:
        """Dealiased spectral v . grad w with a zero mean mode."""
        vx, vy = self.velocity(w_hat)
        wx = self.to_physical(self.ikx * w_hat)
        wy = self.to_physical(self.iky * w_hat)
        n_hat = self.to_spectral(vx * wx + vy * wy) * self.dealias
        n_hat[0, 0] = 0.0
        return n_hat

    def energy(self, w_hat: np.ndarray) -> float:
        """Kinetic energy 0.5 * mean(w psi) from the half spectrum."""
        W = self.grid.W
        c = np.full(w_hat.shape[-1], 2.0)
        c[0] = 1.0
        if W % 2 == 0:
            c[-1] = 1.0
        n = self.grid.H * W
        return float(0.5 * np.sum(c * np.abs(w_hat) ** 2 * self.inv_k2) / n ** 2)


def ns_forcing(grid: Grid2D, amplitude: float) -> np.ndarray:
    Y, X = grid.coordinates()
    phase = 2 * np.pi * (X + Y)
    return amplitude * (np.sin(phase) + np.cos(phase))


def cfl_step(ops: SpectralOps, w_hat: np.ndarray, safety: float) -> float:
    vx, vy = ops.velocity(w_hat)
    hy, hx = ops.grid.spacing
    rate = np.max(np.abs(vx)) / hx + np.max(np.abs(vy)) / hy
    return math.inf if rate == 0 else safety / rate


def simulate_ns(
    w0: np.ndarray,
    params: NsParams,
    t_final: float | None = None,
    record_dt: float | None = None,
    grid: Grid2D | None = None,
    forcing: np.ndarray | None = None,
) -> Trajectory:
    """
    Integrates the vorticity from w0, recording w0 and every record_dt up to t_final.

    Args:
        forcing: Vorticity forcing field; defaults to the configured sinusoidal body force.

    Returns:
        Trajectory: frames (T, 1, H, W) in float64.
    """
    w = np.asarray(w0, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"w0 must be an (H, W) field, got {w.shape}")
    grid = grid or Grid2D(*w.shape)
    if grid.shape != w.shape:
        raise ShapeError(f"w0 {w.shape} does not match grid {grid.shape}")
    record_dt = params.record_dt if record_dt is None else record_dt
    t_final = params.t_final if t_final is None else t_final
    n_records = int(round(t_final / record_dt))
    if abs(n_records * record_dt - t_final) > 1e-9 * max(1.0, t_final):
        raise SolverError(f"t_final={t_final} is not a multiple of record_dt={record_dt}")

    ops = SpectralOps(grid, params.dealias)
    if forcing is None:
        forcing = ns_forcing(grid, params.forcing_amplitude)
    f_hat = ops.to_spectral(forcing)
    f_hat[0, 0] = 0.0
    nu = params.nu

    w_hat = ops.to_spectral(w)
    frames = [w.copy()]
    total_steps = 0
    for record in range(n_records):
        dt = min(cfl_step(ops, w_hat, params.cfl_safety), params.dt_max)
        n_sub = max(1, math.ceil(record_dt / dt - 1e-12))
        dt = record_dt / n_sub
        if dt < params.dt_min:
            raise SolverError(f"CFL step {dt:.3e} fell below dt_min={params.dt_min} at record {record}")
        half = 0.5 * dt * nu * ops.k2
        implicit = 1.0 / (1.0 + half)
        explicit = 1.0 - half
        for _ in range(n_sub):
            n0 = ops.advection(w_hat)
            w_pred = (explicit * w_hat + dt * (f_hat - n0)) * implicit
            n1 = ops.advection(w_pred)
            w_hat = (explicit * w_hat + dt * (f_hat - 0.5 * (n0 + n1))) * implicit
        total_steps += n_sub
        frame = ops.to_physical(w_hat)
        if not np.all(np.isfinite(frame)):
            raise SolverError(f"vorticity diverged at record {record + 1}")
        frames.append(frame)

    logging.debug(f"NS: {total_steps} steps over {n_records} records (nu={nu:.2e})")
    return Trajectory(np.stack(frames)[:, None], grid, dt_record=record_dt)
