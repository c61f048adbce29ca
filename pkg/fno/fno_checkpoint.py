"""
Checkpoint container: `checkpoint.json` (config, tensor table, provenance,
normalization) plus `weights.bin` (raw little-endian tensors at the offsets
listed in the table).
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from datamodel.dm_ops import ChannelStats
from fno.fno_bundle import TaskSpec
from fno.fno_model import FnoConfig, FnoModel
from utils.constant import CHECKPOINT_FILE, FORMAT_VERSION, WEIGHTS_FILE
from utils.errors import DatasetFormatError, ShapeError

STAGES = ("initialized", "pretrained", "finetuned")

_TAGS = {
    np.dtype(np.float32): ("f32le", "<f4"),
    np.dtype(np.float64): ("f64le", "<f8"),
    np.dtype(np.complex64): ("c64le", "<c8"),
    np.dtype(np.complex128): ("c128le", "<c16"),
}
_FROM_TAG = {tag: (np.dtype(le), native) for native, (tag, le) in _TAGS.items()}


@dataclass
class Checkpoint:
    config: FnoConfig
    weights: Dict[str, np.ndarray]
    stage: str = "initialized"
    seed: int = 0
    epochs: int = 0
    dataset_fingerprint: str = ""
    input_stats: Optional[ChannelStats] = None
    target_scale: Optional[List[float]] = None
    task: Optional[TaskSpec] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ShapeError(f"unknown checkpoint stage '{self.stage}'")

    def check_shapes(self):
        reference = FnoModel(FnoConfig(**self.config.to_dict()), seed=0).state_dict()
        for name, value in reference.items():
            if name not in self.weights or self.weights[name].shape != value.shape:
                got = self.weights.get(name)
                raise ShapeError(f"weight '{name}' has shape {None if got is None else got.shape}, config implies {value.shape}")


def checkpoint_from_model(model: FnoModel, stage: str, **kwargs) -> Checkpoint:
    return Checkpoint(config=FnoConfig(**model.config.to_dict()), weights=model.state_dict(), stage=stage,
                      seed=kwargs.pop("seed", model.seed), **kwargs)


def model_from_checkpoint(ckpt: Checkpoint) -> FnoModel:
    model = FnoModel(FnoConfig(**ckpt.config.to_dict()), seed=ckpt.seed)
    model.load_state_dict(ckpt.weights)
    return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    table, blobs, offset = [], [], 0
    for name in sorted(ckpt.weights):
        arr = np.ascontiguousarray(ckpt.weights[name])
        tag, le = _TAGS[arr.dtype]
        blob = arr.astype(le).tobytes()
        table.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    meta = {
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "tensors": table,
        "provenance": {
            "stage": ckpt.stage,
            "seed": ckpt.seed,
            "epochs": ckpt.epochs,
            "dataset_fingerprint": ckpt.dataset_fingerprint,
        },
        "input_stats": ckpt.input_stats.to_dict() if ckpt.input_stats is not None else None,
        "target_scale": ckpt.target_scale,
        "task": ckpt.task.to_dict() if ckpt.task is not None else None,
        "extra": ckpt.extra,
    }
    tmp_weights = out / (WEIGHTS_FILE + ".tmp")
    tmp_meta = out / (CHECKPOINT_FILE + ".tmp")
    tmp_weights.write_bytes(b"".join(blobs))
    with open(tmp_meta, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    os.replace(tmp_weights, out / WEIGHTS_FILE)
    os.replace(tmp_meta, out / CHECKPOINT_FILE)
    logging.info(f"Saved {ckpt.stage} checkpoint ({len(table)} tensors, {offset} bytes) to {out}")
    return out


def load_checkpoint(path: str | Path) -> Checkpoint:
    root = Path(path)
    meta_path, weights_path = root / CHECKPOINT_FILE, root / WEIGHTS_FILE
    if not meta_path.exists() or not weights_path.exists():
        raise DatasetFormatError(f"checkpoint files missing under {root}")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    if str(meta.get("version", "")).split(".")[0] != FORMAT_VERSION.split(".")[0]:
        raise DatasetFormatError(f"unsupported checkpoint version '{meta.get('version')}'")

    data = weights_path.read_bytes()
    weights = {}
    for entry in meta["tensors"]:
        if entry["dtype"] not in _FROM_TAG:
            raise DatasetFormatError(f"unknown tensor dtype tag '{entry['dtype']}'")
        le, native = _FROM_TAG[entry["dtype"]]
        end = entry["offset"] + entry["nbytes"]
        if end > len(data):
            raise DatasetFormatError(f"tensor '{entry['name']}' runs past the weight payload")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype=le, count=count, offset=entry["offset"])
        weights[entry["name"]] = arr.astype(native).reshape(entry["shape"])

    prov = meta.get("provenance", {})
    stats = meta.get("input_stats")
    ckpt = Checkpoint(
        config=FnoConfig(**meta["config"]),
        weights=weights,
        stage=prov.get("stage", "initialized"),
        seed=int(prov.get("seed", 0)),
        epochs=int(prov.get("epochs", 0)),
        dataset_fingerprint=prov.get("dataset_fingerprint", ""),
        input_stats=ChannelStats.from_dict(stats) if stats else None,
        target_scale=meta.get("target_scale"),
        task=TaskSpec.from_dict(meta.get("task")),
        extra=meta.get("extra", {}),
    )
    ckpt.check_shapes()
    return ckpt
