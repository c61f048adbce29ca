"""
物理参数 (Physical parameters) and their seeded sampling.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from utils.constant import (
    NS_CFL_SAFETY,
    NS_DT_MAX,
    NS_DT_MIN,
    NS_FORCING_AMPLITUDE,
    NS_FRAMES,
    NS_RECORD_DT,
    RD_DT,
    RD_DU,
    RD_DV,
    RD_K,
    RD_RECORD_STRIDE,
    RD_T_FINAL,
    SUPPORTED_PDES,
)
from utils.errors import ConfigError, SolverError


@dataclass
class PoissonParams:
    k11: float
    k22: float
    k12: float
    eigenvalues: tuple = ()
    theta: float = 0.0

    def __post_init__(self):
        if not (self.k11 > 0 and self.k11 * self.k22 - self.k12 ** 2 > 0):
            raise SolverError(f"diffusion tensor is not SPD: K11={self.k11}, K22={self.k22}, K12={self.k12}")

    @classmethod
    def from_eigen(cls, lam1: float, lam2: float, theta: float) -> "PoissonParams":
        """K = R(theta) diag(lam1, lam2) R(theta)^T."""
        c, s = math.cos(theta), math.sin(theta)
        return cls(
            k11=lam1 * c * c + lam2 * s * s,
            k22=lam1 * s * s + lam2 * c * c,
            k12=(lam1 - lam2) * c * s,
            eigenvalues=(lam1, lam2),
            theta=theta,
        )

    def to_dict(self) -> Dict[str, float]:
        d = {"K11": self.k11, "K22": self.k22, "K12": self.k12, "theta": self.theta}
        if self.eigenvalues:
            d["lambda1"], d["lambda2"] = (float(v) for v in self.eigenvalues)
        return d


@dataclass
class HelmholtzParams:
    omega: float

    def __post_init__(self):
        if not self.omega > 0:
            raise SolverError(f"Helmholtz wavenumber must be positive, got {self.omega}")

    def to_dict(self) -> Dict[str, float]:
        return {"omega": float(self.omega)}


@dataclass
class RdParams:
    du: float = RD_DU
    dv: float = RD_DV
    k: float = RD_K
    dt: float = RD_DT
    record_stride: int = RD_RECORD_STRIDE
    t_final: float = RD_T_FINAL

    def __post_init__(self):
        if self.du < 0 or self.dv < 0:
            raise SolverError(f"diffusion coefficients must be non-negative, got Du={self.du}, Dv={self.dv}")
        if self.dt <= 0 or self.record_stride < 1:
            raise SolverError(f"invalid time stepping dt={self.dt}, stride={self.record_stride}")

    def to_dict(self) -> Dict[str, float]:
        return {"Du": self.du, "Dv": self.dv, "k": self.k}


@dataclass
class NsParams:
    reynolds: float
    forcing_amplitude: float = NS_FORCING_AMPLITUDE
    record_dt: float = NS_RECORD_DT
    frames: int = NS_FRAMES
    cfl_safety: float = NS_CFL_SAFETY
    dt_max: float = NS_DT_MAX
    dt_min: float = NS_DT_MIN
    dealias: float = 2.0 / 3.0

    def __post_init__(self):
        if not self.reynolds >= 1:
            raise SolverError(f"Reynolds number must be >= 1, got {self.reynolds}")

    @property
    def nu(self) -> float:
        return 1.0 / self.reynolds

    @property
    def t_final(self) -> float:
        return (self.frames - 1) * self.record_dt

    def to_dict(self) -> Dict[str, float]:
        return {"Re": float(self.reynolds), "nu": self.nu}


def _integer_range(values: Sequence[int], pde: str) -> tuple:
    if len(values) != 2:
        raise ConfigError(f"{pde} range must be [low, high], got {list(values)}")
    low, high = int(values[0]), int(values[1])
    if low > high:
        raise ConfigError(f"empty {pde} range [{low}, {high}]")
    return low, high


def sample_params(pde: str, param_range: Sequence[int], seed: int, rd_defaults: RdParams | None = None):
    """
    Draws one parameter set.

    poisson: two integer eigenvalues in [low, high] and a rotation angle in [0, pi).
    helmholtz: integer omega in [low, high].
    ns: Reynolds number uniform over the given set.
    rd: the configured defaults (the range is ignored).
    """
    rng = np.random.default_rng(seed)
    match pde:
        case "poisson":
            low, high = _integer_range(param_range, pde)
            lam = rng.integers(low, high + 1, size=2)
            theta = rng.uniform(0.0, math.pi)
            return PoissonParams.from_eigen(float(lam[0]), float(lam[1]), float(theta))
        case "helmholtz":
            low, high = _integer_range(param_range, pde)
            return HelmholtzParams(float(rng.integers(low, high + 1)))
        case "ns":
            if len(param_range) == 0:
                raise ConfigError("empty Reynolds-number set")
            return NsParams(reynolds=float(param_range[int(rng.integers(len(param_range)))]))
        case "rd":
            return rd_defaults or RdParams()
        case _:
            raise ConfigError(f"unknown pde '{pde}', expected one of {SUPPORTED_PDES}")
