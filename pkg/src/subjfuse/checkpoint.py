"""Named-tensor checkpoint container.

A checkpoint directory holds `manifest.json` (version, tensor names,
shapes, byte offsets) and `tensors.bin` with the tensor data concatenated
as little-endian 4-byte floats in manifest order. Tensors are written
sorted by name so identical parameter sets serialize byte-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"
CONTAINER_VERSION = 1
_DTYPE = "<f4"


def save_tensors(directory: str | Path, tensors: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    manifest = {"version": CONTAINER_VERSION, "dtype": _DTYPE, "tensors": entries}
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (directory / BLOB_NAME).write_bytes(b"".join(blobs))


def load_tensors(directory: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as float64 arrays (values stay exactly the
    serialized float32 values)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest["version"] != CONTAINER_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    raw = (directory / BLOB_NAME).read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        flat = np.frombuffer(raw, dtype=manifest["dtype"], count=count, offset=start)
        tensors[entry["name"]] = flat.reshape(shape).astype(np.float64)
    return tensors


def round_trip32(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Project tensors onto checkpoint precision (float32) and back."""
    return {k: v.astype(_DTYPE).astype(np.float64) for k, v in tensors.items()}


def fingerprint(tensors: dict[str, np.ndarray]) -> dict[str, tuple[tuple[int, ...], bytes]]:
    """(shape, serialized bytes) per tensor, for byte-exactness checks."""
    return {
        name: (tuple(arr.shape), np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
        for name, arr in tensors.items()
    }
