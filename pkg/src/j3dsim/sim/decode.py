"""Decode a Program into flat integer arrays shared by both simulator
cores (pure Python and compiled).

Per cluster: int64 array [n_instr, 12] with column 0 = opcode and columns
1.. = the instruction's canonical args (isa.Instr.args). Descriptors are
flattened into three arrays: meta, per-column L2 bases, and dims.
"""

from __future__ import annotations

import numpy as np

from j3dsim import isa
from j3dsim.config import HardwareConfig

N_COLS = 12


def decode_program(p: isa.Program, cfg: HardwareConfig):
    code = []
    for stream in p.clusters:
        arr = np.zeros((max(len(stream), 1), N_COLS), dtype=np.int64)
        if not stream:
            arr[0, 0] = isa.OPCODE["HALT"]
        for i, instr in enumerate(stream):
            arr[i, 0] = isa.OPCODE[instr.op]
            for j, a in enumerate(instr.args):
                arr[i, 1 + j] = a
        code.append(arr)

    n_desc = (max(p.descs) + 1) if p.descs else 0
    # meta: direction, sram_base, ncols, ndims, fill_value, sram_lo, sram_hi, cycles
    desc_meta = np.zeros((max(n_desc, 1), 8), dtype=np.int64)
    desc_cols = np.zeros((max(n_desc, 1), cfg.ncb_per_cluster), dtype=np.int64)
    desc_dims = np.zeros((max(n_desc, 1), 4, 3), dtype=np.int64)
    desc_dims[:, :, 0] = 1
    for did, d in p.descs.items():
        sram_span = sum(s * (c - 1) for c, _, s in d.dims)
        cycles = -(-d.total_bytes * 8 // cfg.dmpa_width_bits)
        desc_meta[did] = (
            d.direction,
            d.sram_base,
            len(d.cols),
            len(d.dims),
            d.fill_value,
            d.sram_base,
            d.sram_base + sram_span,
            cycles,
        )
        for j, c in enumerate(d.cols):
            desc_cols[did, j] = c
        for k, dim in enumerate(d.dims):
            desc_dims[did, k] = dim

    max_marker = 0
    for stream in p.clusters:
        for instr in stream:
            if instr.op == "MARK":
                max_marker = max(max_marker, instr.args[0])
    return code, desc_meta, desc_cols, desc_dims, max_marker
