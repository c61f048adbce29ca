"""
数据类型 (Field, sample and dataset types).

Arrays are channel-major: a field is (C, H, W), a trajectory (T, C, H, W) and a
dataset stacks n trajectories into (n, T, C, H, W). Stored payloads are float32.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import NonFiniteError, ShapeError

PHYSICAL = "physical"
COORDINATE = "coordinate"


@dataclass(frozen=True)
class Grid2D:
    H: int
    W: int
    extents: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    periodic: bool = True

    def __post_init__(self):
        if self.H < 8 or self.W < 8 or self.H % 2 or self.W % 2:
            raise ShapeError(f"grid must be even and at least 8x8, got {self.H}x{self.W}")
        (y0, y1), (x0, x1) = self.extents
        if y1 <= y0 or x1 <= x0:
            raise ShapeError(f"empty domain extents {self.extents}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.H, self.W

    @property
    def lengths(self) -> Tuple[float, float]:
        (y0, y1), (x0, x1) = self.extents
        return y1 - y0, x1 - x0

    @property
    def spacing(self) -> Tuple[float, float]:
        Ly, Lx = self.lengths
        return Ly / self.H, Lx / self.W

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(Y, X) mesh of grid points. Periodic grids start at the lower edge, bounded grids are cell-centered."""
        (y0, _), (x0, _) = self.extents
        hy, hx = self.spacing
        offset = 0.0 if self.periodic else 0.5
        y = y0 + (np.arange(self.H) + offset) * hy
        x = x0 + (np.arange(self.W) + offset) * hx
        return np.meshgrid(y, x, indexing="ij")

    def to_dict(self) -> dict:
        return {"H": self.H, "W": self.W, "extents": [list(e) for e in self.extents], "periodic": self.periodic}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid2D":
        extents = d.get("extents", [[0.0, 1.0], [0.0, 1.0]])
        return cls(int(d["H"]), int(d["W"]), tuple(tuple(float(v) for v in e) for e in extents), bool(d.get("periodic", True)))


def rd_grid(H: int, W: int | None = None) -> Grid2D:
    return Grid2D(H, W or H, ((-1.0, 1.0), (-1.0, 1.0)), periodic=False)


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    role: str = PHYSICAL

    def __post_init__(self):
        if self.role not in (PHYSICAL, COORDINATE):
            raise ShapeError(f"channel role must be physical or coordinate, got '{self.role}'")


@dataclass
class Field:
    values: np.ndarray
    grid: Grid2D

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid.shape:
            raise ShapeError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("field contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass
class Trajectory:
    frames: np.ndarray
    grid: Grid2D
    dt_record: float = 1.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[2:] != self.grid.shape:
            raise ShapeError(f"trajectory shape {self.frames.shape} does not match grid {self.grid.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def snapshot(self, t: int) -> Field:
        return Field(self.frames[t], self.grid)


@dataclass
class SampleRecord:
    """One PDE sample; a missing solution marks it as unlabeled."""

    input: np.ndarray
    params: Dict[str, float]
    solution: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        if not self.params:
            raise ShapeError("sample params must not be empty")
        self.input = _as_tchw(self.input)
        if self.solution is not None:
            self.solution = _as_tchw(self.solution)

    @property
    def labeled(self) -> bool:
        return self.solution is not None


def _as_tchw(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (T,C,H,W), got {a.shape}")
    return a


@dataclass
class Dataset:
    pde: str
    grid: Grid2D
    channels: List[ChannelSpec]
    inputs: np.ndarray
    params: List[Dict[str, float]]
    solutions: Optional[np.ndarray] = None
    solution_channels: List[ChannelSpec] = field(default_factory=list)
    provenance: List[str] = field(default_factory=list)
    seed: int = 0
    param_ranges: Dict[str, object] = field(default_factory=dict)
    dt_record: Optional[float] = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if self.inputs.ndim != 5:
            raise ShapeError(f"dataset inputs must be (n,T,C,H,W), got {self.inputs.shape}")
        n, _, C, H, W = self.inputs.shape
        if (H, W) != self.grid.shape:
            raise ShapeError(f"inputs {H}x{W} do not match grid {self.grid.shape}")
        if len(self.channels) != C:
            raise ShapeError(f"{len(self.channels)} channel specs for {C} channels")
        if len(self.params) != n:
            raise ShapeError(f"{len(self.params)} param records for {n} samples")
        if not self.provenance:
            self.provenance = [f"{self.pde}:{self.seed}:{i}" for i in range(n)]
        if len(self.provenance) != n:
            raise ShapeError(f"{len(self.provenance)} provenance entries for {n} samples")
        if self.solutions is not None:
            self.solutions = np.ascontiguousarray(self.solutions, dtype=np.float32)
            if self.solutions.ndim != 5 or self.solutions.shape[0] != n or self.solutions.shape[3:] != (H, W):
                raise ShapeError(f"solutions {self.solutions.shape} do not match inputs {self.inputs.shape}")
            if len(self.solution_channels) != self.solutions.shape[2]:
                raise ShapeError("solution channel specs do not match solution channels")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def __len__(self):
        return self.n

    @property
    def T(self) -> int:
        return self.inputs.shape[1]

    @property
    def C(self) -> int:
        return self.inputs.shape[2]

    @property
    def labeled(self) -> bool:
        return self.solutions is not None

    def sample(self, i: int) -> SampleRecord:
        return SampleRecord(
            input=self.inputs[i],
            params=dict(self.params[i]),
            solution=None if self.solutions is None else self.solutions[i],
            provenance=self.provenance[i],
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            pde=self.pde,
            grid=self.grid,
            channels=list(self.channels),
            inputs=self.inputs[idx],
            params=[self.params[i] for i in idx],
            solutions=None if self.solutions is None else self.solutions[idx],
            solution_channels=list(self.solution_channels),
            provenance=[self.provenance[i] for i in idx],
            seed=self.seed,
            param_ranges=dict(self.param_ranges),
            dt_record=self.dt_record,
        )

    def without_solutions(self) -> "Dataset":
        unlabeled = self.subset(range(self.n))
        unlabeled.solutions = None
        unlabeled.solution_channels = []
        return unlabeled

    def physical_mask(self) -> np.ndarray:
        return np.array([c.role == PHYSICAL for c in self.channels], dtype=bool)

    @classmethod
    def from_samples(
        cls,
        pde: str,
        grid: Grid2D,
        channels: List[ChannelSpec],
        samples: Sequence[SampleRecord],
        solution_channels: Optional[List[ChannelSpec]] = None,
        **kwargs,
    ) -> "Dataset":
        if not samples:
            raise ShapeError("from_samples needs at least one sample; build empty datasets directly")
        shapes = {s.input.shape for s in samples}
        if len(shapes) != 1:
            raise ShapeError(f"heterogeneous sample shapes {sorted(shapes)}")
        labeled = [s.labeled for s in samples]
        if any(labeled) and not all(labeled):
            raise ShapeError("cannot mix labeled and unlabeled samples")
        solutions = np.stack([s.solution for s in samples]) if all(labeled) else None
        return cls(
            pde=pde,
            grid=grid,
            channels=channels,
            inputs=np.stack([s.input for s in samples]),
            params=[dict(s.params) for s in samples],
            solutions=solutions,
            solution_channels=list(solution_channels or []) if solutions is not None else [],
            provenance=[s.provenance for s in samples] if all(s.provenance for s in samples) else [],
            **kwargs,
        )


@dataclass
class DatasetManifest:
    version: str
    pde: str
    H: int
    W: int
    T: int
    C: int
    channels: List[dict]
    dtype: str
    layout: str
    n: int
    offsets: List[int]
    seed: int
    param_ranges: dict
    extents: List[List[float]]
    periodic: bool
    params: List[dict]
    provenance: List[str]
    solution: Optional[dict] = None
    dt_record: Optional[float] = None

    @property
    def sample_bytes(self) -> int:
        size = self.T * self.C * self.H * self.W
        if self.solution:
            size += self.solution["T"] * self.solution["C"] * self.H * self.W
        return 4 * size
