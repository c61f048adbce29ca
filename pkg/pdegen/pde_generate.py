"""
数据集生成 (Dataset generation) for the four PDE families.

Every sample draws from its own seed, derive_seed(seed, index), so the payload
does not depend on the worker count. Unlabeled mode only samples inputs; the
labeled mode additionally runs the solver. Both phases are timed.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from datamodel.dm_types import ChannelSpec, Dataset, Grid2D, SampleRecord, rd_grid
from pdegen.pde_elliptic import solve_helmholtz, solve_poisson
from pdegen.pde_grf import GrfSpec, sample_grf
from pdegen.pde_ns import simulate_ns
from pdegen.pde_params import HelmholtzParams, NsParams, PoissonParams, RdParams, sample_params
from pdegen.pde_rd import simulate_rd
from utils.constant import NS_DT_MAX, NS_FORCING_AMPLITUDE, NS_FRAMES, NS_RECORD_DT, RD_T_IN, SUPPORTED_PDES
from utils.errors import ConfigError
from utils.utils import derive_seed, host_descriptor, run_indexed_jobs, timed

INPUT_CHANNELS = {
    "poisson": ["f", "K11", "K22", "K12"],
    "helmholtz": ["f", "omega"],
    "rd": ["u", "v"],
    "ns": ["w"],
}
SOLUTION_CHANNELS = {"poisson": ["u"], "helmholtz": ["u"], "rd": ["u", "v"], "ns": ["w"]}

COST_FIELDS = ["pde", "n", "labeled_secs", "unlabeled_secs", "host"]


@dataclass
class GenerationSettings:
    """Solver and source settings shared by every sample of one generate call."""

    resolution: int = 64
    grf: GrfSpec = field(default_factory=GrfSpec)
    rd: RdParams = field(default_factory=RdParams)
    rd_t_in: int = RD_T_IN
    ns_record_dt: float = NS_RECORD_DT
    ns_frames: int = NS_FRAMES
    ns_dt_max: float = NS_DT_MAX
    ns_forcing_amplitude: float = NS_FORCING_AMPLITUDE

    def grid(self, pde: str) -> Grid2D:
        return rd_grid(self.resolution) if pde == "rd" else Grid2D(self.resolution, self.resolution)


@dataclass
class CostReport:
    pde: str
    n: int
    labeled_secs: float
    unlabeled_secs: float
    host: str = field(default_factory=host_descriptor)

    def __post_init__(self):
        if self.labeled_secs < 0 or self.unlabeled_secs < 0:
            raise ValueError("wall times must be non-negative")

    def to_row(self) -> dict:
        return {k: getattr(self, k) for k in COST_FIELDS}


def append_cost_row(report: CostReport, path: str | Path):
    """Appends one CSV row (pde, n, labeled_secs, unlabeled_secs, host), writing the header once."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    new = not p.exists() or p.stat().st_size == 0
    pd.DataFrame([report.to_row()], columns=COST_FIELDS).to_csv(p, mode="a", header=new, index=False)


def _broadcast(value: float, grid: Grid2D) -> np.ndarray:
    return np.full(grid.shape, value, dtype=np.float64)


# --- 每种 PDE 的单样本构造 (Per-PDE sample builders) ---
# Each builder returns (inputs (T,C,H,W) float64, solution or None, params dict).

def build_poisson_sample(params: PoissonParams, settings: GenerationSettings, seed: int, labeled: bool):
    grid = settings.grid("poisson")
    f = sample_grf(settings.grf, grid, derive_seed(seed, "source")).values[0]
    inputs = np.stack([f, _broadcast(params.k11, grid), _broadcast(params.k22, grid), _broadcast(params.k12, grid)])[None]
    solution = solve_poisson(params, f, grid)[None, None] if labeled else None
    return inputs, solution, params.to_dict()


def build_helmholtz_sample(params: HelmholtzParams, settings: GenerationSettings, seed: int, labeled: bool):
    grid = settings.grid("helmholtz")
    f = sample_grf(settings.grf, grid, derive_seed(seed, "source")).values[0]
    inputs = np.stack([f, _broadcast(params.omega, grid)])[None]
    solution = solve_helmholtz(params, f, grid)[None, None] if labeled else None
    return inputs, solution, params.to_dict()


def build_rd_sample(params: RdParams, settings: GenerationSettings, seed: int, labeled: bool):
    grid = settings.grid("rd")
    u0 = sample_grf(settings.grf, grid, derive_seed(seed, "u0")).values[0]
    v0 = sample_grf(settings.grf, grid, derive_seed(seed, "v0")).values[0]
    if not labeled:
        return np.stack([u0, v0])[None], None, params.to_dict()
    frames = simulate_rd(u0, v0, params, grid=grid).frames
    t_in = settings.rd_t_in
    if frames.shape[0] <= t_in:
        raise ConfigError(f"RD run records {frames.shape[0]} frames, need more than t_in={t_in}")
    return frames[:t_in], frames[t_in:], params.to_dict()


def build_ns_sample(params: NsParams, settings: GenerationSettings, seed: int, labeled: bool):
    grid = settings.grid("ns")
    w0 = sample_grf(settings.grf, grid, derive_seed(seed, "w0")).values[0]
    if not labeled:
        return w0[None, None], None, params.to_dict()
    params = replace(
        params,
        record_dt=settings.ns_record_dt,
        frames=settings.ns_frames,
        dt_max=settings.ns_dt_max,
        forcing_amplitude=settings.ns_forcing_amplitude,
    )
    traj = simulate_ns(w0, params, grid=grid)
    return w0[None, None], traj.frames, params.to_dict()


BUILDERS: Dict[str, Callable] = {
    "poisson": build_poisson_sample,
    "helmholtz": build_helmholtz_sample,
    "rd": build_rd_sample,
    "ns": build_ns_sample,
}


def generate(
    pde: str,
    n: int,
    param_range: Sequence[int],
    labeled: bool,
    seed: int,
    settings: Optional[GenerationSettings] = None,
    max_workers: Optional[int] = None,
) -> Tuple[Dataset, CostReport]:
    """
    Generates n samples of one PDE family.

    Args:
        pde (str): poisson | helmholtz | rd | ns.
        n (int): Number of samples.
        param_range: [low, high] integers (poisson, helmholtz) or the Reynolds set (ns).
        labeled (bool): Also simulate solutions.
        seed (int): Base seed; sample i uses derive_seed(seed, i).

    Returns:
        (Dataset, CostReport): float32 dataset; wall time of the input phase and
        of the solver phase (zero when unlabeled).
    """
    if pde not in SUPPORTED_PDES:
        raise ConfigError(f"unknown pde '{pde}', expected one of {SUPPORTED_PDES}")
    if n < 0:
        raise ConfigError(f"sample count must be non-negative, got {n}")
    settings = settings or GenerationSettings()
    grid = settings.grid(pde)
    builder = BUILDERS[pde]

    logging.info(f"Step 1: sampling {n} {pde} parameter sets and sources (seed={seed})...")
    with timed() as unlabeled_secs:
        params = [
            sample_params(pde, param_range, derive_seed(seed, i, "params"), rd_defaults=settings.rd)
            for i in range(n)
        ]
        unlabeled = run_indexed_jobs(
            lambda i: builder(params[i], settings, derive_seed(seed, i), False), list(range(n)), max_workers, "sample"
        )

    labeled_out = None
    labeled_secs = [0.0]
    if labeled:
        logging.info(f"Step 2: simulating {n} {pde} solutions...")
        with timed() as labeled_secs:
            labeled_out = run_indexed_jobs(
                lambda i: builder(params[i], settings, derive_seed(seed, i), True), list(range(n)), max_workers, "solve"
            )

    channels = [ChannelSpec(name) for name in INPUT_CHANNELS[pde]]
    solution_channels = [ChannelSpec(name) for name in SOLUTION_CHANNELS[pde]]
    ranges = {pde: list(param_range)}
    results = labeled_out if labeled else unlabeled
    records: List[SampleRecord] = [
        SampleRecord(input=inp, params=prm, solution=sol, provenance=f"{pde}:{seed}:{i}")
        for i, (inp, sol, prm) in enumerate(results)
    ]

    if not labeled and pde in ("rd", "ns") and n > 1:
        # individual snapshots carry no temporal order
        order = np.random.default_rng(derive_seed(seed, "shuffle")).permutation(n)
        records = [records[i] for i in order]

    dt_record = None
    if pde == "rd":
        dt_record = settings.rd.dt * settings.rd.record_stride
    elif pde == "ns":
        dt_record = settings.ns_record_dt

    if records:
        dataset = Dataset.from_samples(
            pde, grid, channels, records, solution_channels, seed=seed, param_ranges=ranges, dt_record=dt_record
        )
    else:
        T = settings.rd_t_in if (pde == "rd" and labeled) else 1
        dataset = Dataset(pde=pde, grid=grid, channels=channels, inputs=np.zeros((0, T, len(channels)) + grid.shape),
                          params=[], seed=seed, param_ranges=ranges, dt_record=dt_record)

    report = CostReport(pde=pde, n=n, labeled_secs=labeled_secs[0] + unlabeled_secs[0] if labeled else 0.0,
                        unlabeled_secs=unlabeled_secs[0])
    logging.info(f"Generated {n} {pde} samples: inputs {unlabeled_secs[0]:.3f}s, solutions {labeled_secs[0]:.3f}s")
    return dataset, report


def measure_cost(
    pde: str,
    n: int,
    param_range: Sequence[int],
    seed: int,
    settings: Optional[GenerationSettings] = None,
    max_workers: Optional[int] = None,
) -> CostReport:
    """Times a full unlabeled run against a full labeled run at equal n."""
    _, unlabeled = generate(pde, n, param_range, False, seed, settings, max_workers)
    _, labeled = generate(pde, n, param_range, True, seed, settings, max_workers)
    return CostReport(pde=pde, n=n, labeled_secs=labeled.labeled_secs, unlabeled_secs=unlabeled.unlabeled_secs)


def settings_to_dict(settings: GenerationSettings) -> dict:
    return asdict(settings)
