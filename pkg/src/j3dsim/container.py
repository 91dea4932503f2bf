"""Flat binary tensor container with a JSON manifest.

A container is a pair of files: <stem>.json (manifest) and <stem>.bin
(payload). The manifest maps tensor names to {offset, nbytes, dtype, shape}
into the little-endian flat binary. Integer tensors are stored
two's-complement.
"""

from __future__ import annotations

import json
import os

import numpy as np

_DTYPES = {
    "float32": np.dtype("<f4"),
    "int8": np.dtype("i1"),
    "uint8": np.dtype("u1"),
    "int32": np.dtype("<i4"),
}


def write_container(stem: str, tensors: dict[str, np.ndarray]) -> tuple[str, str]:
    """Write tensors to <stem>.json + <stem>.bin. Returns the two paths."""
    manifest: dict = {"data_file": os.path.basename(stem) + ".bin", "tensors": {}}
    blob = bytearray()
    for name, arr in tensors.items():
        dtype_name = {v: k for k, v in _DTYPES.items()}.get(arr.dtype.newbyteorder("<"))
        if dtype_name is None:
            raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        manifest["tensors"][name] = {
            "offset": len(blob),
            "nbytes": len(data),
            "dtype": dtype_name,
            "shape": list(arr.shape),
        }
        blob.extend(data)
    man_path, bin_path = stem + ".json", stem + ".bin"
    with open(man_path, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    with open(bin_path, "wb") as f:
        f.write(bytes(blob))
    return man_path, bin_path


def read_container(manifest_path: str) -> dict[str, np.ndarray]:
    with open(manifest_path) as f:
        manifest = json.load(f)
    bin_path = os.path.join(os.path.dirname(manifest_path), manifest["data_file"])
    with open(bin_path, "rb") as f:
        blob = f.read()
    out: dict[str, np.ndarray] = {}
    for name, entry in manifest["tensors"].items():
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise ValueError(f"tensor {name!r}: unknown dtype {entry['dtype']!r}")
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"tensor {name!r}: payload out of range")
        out[name] = np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).copy()
    return out
