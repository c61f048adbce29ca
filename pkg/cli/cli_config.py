"""
实验配置 (Experiment configuration).

A TOML document mapped onto nested dataclasses. Every key path is checked;
unknown keys and wrongly typed values are rejected with their dotted path.
The normative key paths are listed in README.md.
"""
import dataclasses
import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from utils.constant import (
    DEFAULT_SEEDS,
    GRF_ALPHA,
    GRF_TAU,
    ICL_CHUNK,
    ICL_K,
    LEARNING_RATE,
    MAX_BATCH_SIZE,
    NS_FRAMES,
    NS_RECORD_DT,
    PARAM_RANGES,
    RD_T_FINAL,
    RD_T_IN,
    SUPPORTED_PDES,
)
from utils.errors import ConfigError
from utils.utils import output_root, stable_hash


@dataclass
class PdeBlock:
    name: str = "poisson"
    resolution: int = 64
    ranges: Dict[str, List[float]] = field(default_factory=dict)

    def stage_range(self, stage: str) -> List[float]:
        if stage not in ("pretrain", "train", "ood"):
            raise ConfigError(f"unknown parameter stage '{stage}'")
        if stage in self.ranges:
            return list(self.ranges[stage])
        return list(PARAM_RANGES.get(self.name, {}).get(stage, []))


@dataclass
class ModelBlock:
    width: int = 32
    modes1: int = 12
    modes2: int = 12
    layers: int = 4
    activation: str = "gelu"
    dtype: str = "f32"


@dataclass
class GenerationBlock:
    n: int = 640
    labeled: bool = True
    seed: int = 1
    n_unlabeled: int = 512
    n_ood: int = 32
    n_pool: int = 64
    grf_alpha: float = GRF_ALPHA
    grf_tau: float = GRF_TAU
    rd_t_in: int = RD_T_IN
    rd_t_final: float = RD_T_FINAL
    ns_frames: int = NS_FRAMES
    ns_record_dt: float = NS_RECORD_DT


@dataclass
class PretrainBlock:
    mask_ratio: float = 0.0
    mask_patch: int = 1
    blur_min: float = 0.0
    blur_max: float = 1.0
    epochs: int = 200
    batch_size: int = MAX_BATCH_SIZE
    lr: float = LEARNING_RATE
    loss: str = "relative_l2"
    order: str = "mask_blur"
    n: int = 0
    seed: int = 1
    union: List[str] = field(default_factory=list)


@dataclass
class FinetuneBlock:
    budgets: List[int] = field(default_factory=lambda: [16, 32, 64])
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    init_modes: List[str] = field(default_factory=lambda: ["random", "pretrained"])
    epochs: int = 100
    lr: float = LEARNING_RATE
    split_seed: int = 0
    fractions: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    rollout_steps: int = 0


@dataclass
class IclBlock:
    J: List[int] = field(default_factory=lambda: [0, 4, 16, 32])
    k: int = ICL_K
    sources: List[str] = field(default_factory=lambda: ["model_output", "backbone_feature"])
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    chunk: int = ICL_CHUNK


@dataclass
class ExperimentConfig:
    pde: PdeBlock = field(default_factory=PdeBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    generation: GenerationBlock = field(default_factory=GenerationBlock)
    pretrain: PretrainBlock = field(default_factory=PretrainBlock)
    finetune: FinetuneBlock = field(default_factory=FinetuneBlock)
    icl: IclBlock = field(default_factory=IclBlock)
    output_dir: str = ""

    def __post_init__(self):
        if self.pde.name not in SUPPORTED_PDES:
            raise ConfigError(f"pde.name must be one of {SUPPORTED_PDES}, got '{self.pde.name}'")
        for other in self.pretrain.union:
            if other not in SUPPORTED_PDES:
                raise ConfigError(f"pretrain.union entry '{other}' is not a supported PDE")

    @property
    def root(self) -> Path:
        return output_root(self.output_dir or None)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"key '{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{path}' expects an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"key '{path}' expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"key '{path}' expects a list, got {value!r}")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"key '{path}' expects a table, got {value!r}")
        return {k: list(v) if isinstance(v, list) else v for k, v in value.items()}
    return value


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"key '{prefix.rstrip('.') or '<root>'}' expects a table")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown key '{path}'")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value, f"{path}.")
        else:
            kwargs[key] = _coerce(path, value, current)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(path: Optional[str | Path] = None) -> ExperimentConfig:
    """Reads a TOML experiment document; no path means all defaults."""
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    return config_from_dict(data)


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Returns a copy with dotted-path overrides applied, e.g. {"pretrain.mask_ratio": 0.7}."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown key '{dotted}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key '{dotted}'")
        node[parts[-1]] = value
    return config_from_dict(data)


def config_hash(config: ExperimentConfig, stage: str = "", blocks: Optional[Sequence[str]] = None, **extra: Any) -> str:
    """
    SHA-256 of the canonical JSON of the parsed config plus the stage and any run keys.

    `blocks` restricts the hash to the named top-level blocks, so a stage is not
    invalidated by settings it never reads.
    """
    data = config.to_dict()
    if blocks is not None:
        data = {b: data[b] for b in blocks}
    return stable_hash({"config": data, "stage": stage, "extra": extra})
