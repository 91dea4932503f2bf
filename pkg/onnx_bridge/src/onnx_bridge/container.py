"""Writer for the accelerator toolchain's weight container format.

A container is <stem>.json (manifest) + <stem>.bin (little-endian flat
payload). Kept self-contained so this package only couples to the
serialized format, not to the toolchain's code.
"""

from __future__ import annotations

import json
import os

import numpy as np

_DTYPE_NAMES = {
    np.dtype("<f4"): "float32",
    np.dtype("i1"): "int8",
    np.dtype("u1"): "uint8",
    np.dtype("<i4"): "int32",
}


def write_container(stem: str, tensors: dict[str, np.ndarray]) -> tuple[str, str]:
    manifest: dict = {"data_file": os.path.basename(stem) + ".bin", "tensors": {}}
    blob = bytearray()
    for name, arr in tensors.items():
        dtype_name = _DTYPE_NAMES.get(arr.dtype.newbyteorder("<"))
        if dtype_name is None:
            raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr).tobytes()
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
