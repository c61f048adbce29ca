"""
数据集容器 (On-disk dataset container).

A dataset directory holds `manifest.json` (UTF-8 JSON) and `payload.bin`
(little-endian float32, sample-major; each sample is its input block T*C*H*W
followed by its solution block, if labeled). Offsets in the manifest point at
the first byte of every sample.
"""
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from datamodel.dm_types import ChannelSpec, Dataset, DatasetManifest, Grid2D
from utils.constant import DTYPE_TAG, FORMAT_VERSION, LAYOUT_TAG, MANIFEST_FILE, PAYLOAD_FILE
from utils.errors import DatasetFormatError

_LE_F32 = np.dtype("<f4")


def build_manifest(dataset: Dataset) -> DatasetManifest:
    solution = None
    if dataset.solutions is not None:
        solution = {
            "T": int(dataset.solutions.shape[1]),
            "C": int(dataset.solutions.shape[2]),
            "channels": [asdict(c) for c in dataset.solution_channels],
        }
    manifest = DatasetManifest(
        version=FORMAT_VERSION,
        pde=dataset.pde,
        H=dataset.grid.H,
        W=dataset.grid.W,
        T=dataset.T,
        C=dataset.C,
        channels=[asdict(c) for c in dataset.channels],
        dtype=DTYPE_TAG,
        layout=LAYOUT_TAG,
        n=dataset.n,
        offsets=[],
        seed=int(dataset.seed),
        param_ranges=dataset.param_ranges,
        extents=[list(e) for e in dataset.grid.extents],
        periodic=dataset.grid.periodic,
        params=[{k: float(v) for k, v in p.items()} for p in dataset.params],
        provenance=list(dataset.provenance),
        solution=solution,
        dt_record=dataset.dt_record,
    )
    manifest.offsets = [i * manifest.sample_bytes for i in range(dataset.n)]
    return manifest


def write_dataset(dataset: Dataset, path: str | Path) -> DatasetManifest:
    """
    Writes a dataset directory; files are written to temporaries and renamed in place.

    Args:
        dataset (Dataset): Homogeneous samples (guaranteed by the Dataset type).
        path (str | Path): Target directory, created if missing.

    Returns:
        DatasetManifest: The manifest that was written.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(dataset)

    n = dataset.n
    blocks = [dataset.inputs.reshape(n, -1).astype(_LE_F32)]
    if dataset.solutions is not None:
        blocks.append(dataset.solutions.reshape(n, -1).astype(_LE_F32))
    payload = np.concatenate(blocks, axis=1) if n else np.zeros(0, dtype=_LE_F32)

    tmp_payload = out / (PAYLOAD_FILE + ".tmp")
    tmp_manifest = out / (MANIFEST_FILE + ".tmp")
    with open(tmp_payload, "wb") as f:
        f.write(np.ascontiguousarray(payload).tobytes())
    with open(tmp_manifest, "w", encoding="utf-8") as f:
        json.dump(asdict(manifest), f, indent=2)
    os.replace(tmp_payload, out / PAYLOAD_FILE)
    os.replace(tmp_manifest, out / MANIFEST_FILE)
    logging.info(f"Wrote dataset '{dataset.pde}' with {n} samples to {out}")
    return manifest


def read_manifest(path: str | Path) -> DatasetManifest:
    manifest_path = Path(path) / MANIFEST_FILE
    if not manifest_path.exists():
        raise DatasetFormatError(f"manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        raw = json.load(f)

    version = str(raw.get("version", ""))
    if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
        raise DatasetFormatError(f"unsupported format version '{version}' (expected {FORMAT_VERSION})")
    if raw.get("dtype") != DTYPE_TAG:
        raise DatasetFormatError(f"unsupported dtype/byte order '{raw.get('dtype')}' (expected {DTYPE_TAG})")
    if raw.get("layout") != LAYOUT_TAG:
        raise DatasetFormatError(f"unsupported layout '{raw.get('layout')}' (expected {LAYOUT_TAG})")

    known = set(DatasetManifest.__dataclass_fields__)
    required = {"version", "pde", "H", "W", "T", "C", "channels", "dtype", "layout", "n", "offsets"}
    missing = required - set(raw)
    if missing:
        raise DatasetFormatError(f"manifest is missing keys {sorted(missing)}")
    kwargs = {k: v for k, v in raw.items() if k in known}
    kwargs.setdefault("seed", 0)
    kwargs.setdefault("param_ranges", {})
    kwargs.setdefault("extents", [[0.0, 1.0], [0.0, 1.0]])
    kwargs.setdefault("periodic", True)
    kwargs.setdefault("params", [{"index": float(i)} for i in range(raw["n"])])
    kwargs.setdefault("provenance", [])
    return DatasetManifest(**kwargs)


def read_dataset(path: str | Path) -> Dataset:
    """Reads a dataset directory, validating the offset table against the payload."""
    manifest = read_manifest(path)
    payload_path = Path(path) / PAYLOAD_FILE
    if not payload_path.exists():
        raise DatasetFormatError(f"payload not found: {payload_path}")
    data = payload_path.read_bytes()

    n, size = manifest.n, manifest.sample_bytes
    offsets = manifest.offsets
    if len(offsets) != n:
        raise DatasetFormatError(f"offset table has {len(offsets)} entries for {n} samples")
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DatasetFormatError("offsets are not strictly increasing")
    for i, off in enumerate(offsets):
        if off < 0 or off + size > len(data):
            raise DatasetFormatError(f"sample {i} at offset {off} runs past the payload ({len(data)} bytes)")
    if len(data) != n * size:
        raise DatasetFormatError(f"payload has {len(data)} bytes, expected {n * size}")

    in_count = manifest.T * manifest.C * manifest.H * manifest.W
    sol = manifest.solution
    inputs = np.empty((n, manifest.T, manifest.C, manifest.H, manifest.W), dtype=np.float32)
    solutions = None
    if sol:
        solutions = np.empty((n, sol["T"], sol["C"], manifest.H, manifest.W), dtype=np.float32)
    for i, off in enumerate(offsets):
        block = np.frombuffer(data, dtype=_LE_F32, count=size // 4, offset=off)
        inputs[i] = block[:in_count].reshape(inputs.shape[1:])
        if solutions is not None:
            solutions[i] = block[in_count:].reshape(solutions.shape[1:])

    grid = Grid2D.from_dict({"H": manifest.H, "W": manifest.W, "extents": manifest.extents, "periodic": manifest.periodic})
    return Dataset(
        pde=manifest.pde,
        grid=grid,
        channels=[ChannelSpec(**c) for c in manifest.channels],
        inputs=inputs,
        params=[dict(p) for p in manifest.params],
        solutions=solutions,
        solution_channels=[ChannelSpec(**c) for c in sol["channels"]] if sol else [],
        provenance=list(manifest.provenance),
        seed=manifest.seed,
        param_ranges=manifest.param_ranges,
        dt_record=manifest.dt_record,
    )


def payload_bytes(path: str | Path) -> bytes:
    return (Path(path) / PAYLOAD_FILE).read_bytes()
