"""
Raw snapshot ingestion.

A raw file is a bare little-endian float32 array of n*T*C*H*W values; its JSON
descriptor names the shape. No preprocessing is applied.
"""
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from datamodel.dm_types import ChannelSpec, Dataset, Grid2D
from utils.constant import DTYPE_TAG
from utils.errors import DatasetFormatError

_LE_F32 = np.dtype("<f4")


def _load_descriptor(descriptor: dict | str | Path) -> dict:
    if isinstance(descriptor, dict):
        return dict(descriptor)
    with open(descriptor, "r", encoding="utf-8") as f:
        return json.load(f)


def import_raw(raw_path: str | Path, descriptor: dict | str | Path) -> Dataset:
    """
    Args:
        raw_path: Raw float32 payload.
        descriptor: Dict or JSON file with keys n, H, W and optionally T (1), C (1),
            pde ("raw"), dtype ("f32le"), channels (list of names), seed.
    """
    desc = _load_descriptor(descriptor)
    try:
        n, H, W = int(desc["n"]), int(desc["H"]), int(desc["W"])
    except KeyError as e:
        raise DatasetFormatError(f"raw descriptor is missing {e}") from e
    T, C = int(desc.get("T", 1)), int(desc.get("C", 1))
    if desc.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise DatasetFormatError(f"raw import supports {DTYPE_TAG} only, got '{desc.get('dtype')}'")

    data = Path(raw_path).read_bytes()
    expected = 4 * n * T * C * H * W
    if len(data) != expected:
        raise DatasetFormatError(f"raw file has {len(data)} bytes, descriptor implies {expected}")

    values = np.frombuffer(data, dtype=_LE_F32).astype(np.float32).reshape(n, T, C, H, W)
    names = desc.get("channels") or [f"c{i}" for i in range(C)]
    if len(names) != C:
        raise DatasetFormatError(f"{len(names)} channel names for C={C}")
    pde = desc.get("pde", "raw")
    logging.info(f"Imported {n} raw samples of shape {T}x{C}x{H}x{W} from {raw_path}")
    return Dataset(
        pde=pde,
        grid=Grid2D(H, W),
        channels=[ChannelSpec(name) for name in names],
        inputs=values,
        params=[{"index": float(i)} for i in range(n)],
        seed=int(desc.get("seed", 0)),
    )


def export_raw(dataset: Dataset, raw_path: str | Path, descriptor_path: Optional[str | Path] = None) -> dict:
    """Writes the input block as a raw file plus its descriptor; solutions are not exported."""
    desc = {
        "pde": dataset.pde,
        "n": dataset.n,
        "T": dataset.T,
        "C": dataset.C,
        "H": dataset.grid.H,
        "W": dataset.grid.W,
        "dtype": DTYPE_TAG,
        "channels": [c.name for c in dataset.channels],
        "seed": int(dataset.seed),
    }
    Path(raw_path).write_bytes(np.ascontiguousarray(dataset.inputs, dtype=_LE_F32).tobytes())
    if descriptor_path is not None:
        with open(descriptor_path, "w", encoding="utf-8") as f:
            json.dump(desc, f, indent=2)
    return desc
