"""Parameter files: a JSON manifest plus a little-endian raw float blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def write_blob(arrays: dict[str, np.ndarray], blob_path: str | Path) -> list[dict]:
    """Write arrays back to back; returns manifest records ``{name, shape, dtype, offset}``."""
    manifest = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, array in arrays.items():
            dtype = np.dtype(array.dtype).name
            if dtype not in _DTYPES:
                raise ValueError(f"{name}: unsupported dtype {dtype}")
            raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
            fh.write(raw)
            manifest.append({"name": name, "shape": list(array.shape), "dtype": dtype, "offset": offset})
            offset += len(raw)
    return manifest


def read_blob(manifest: list[dict], blob_path: str | Path) -> dict[str, np.ndarray]:
    data = Path(blob_path).read_bytes()
    out = {}
    for rec in manifest:
        dt = np.dtype(_DTYPES[rec["dtype"]])
        count = int(np.prod(rec["shape"], dtype=np.int64))
        end = rec["offset"] + count * dt.itemsize
        if end > len(data):
            raise ValueError(f"{blob_path}: truncated blob at {rec['name']}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=rec["offset"])
        out[rec["name"]] = arr.reshape(rec["shape"]).astype(dt.newbyteorder("="))
    return out


def save_parameters(arrays: dict[str, np.ndarray], manifest_path: str | Path,
                    blob_path: str | Path | None = None) -> None:
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path) if blob_path else manifest_path.with_suffix(".bin")
    records = write_blob(arrays, blob_path)
    doc = {"blob": blob_path.name, "parameters": records}
    manifest_path.write_text(json.dumps(doc, indent=1) + "\n")


def load_parameters(manifest_path: str | Path) -> dict[str, np.ndarray]:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    return read_blob(doc["parameters"], manifest_path.parent / doc["blob"])
