"""Machine state construction, host-command interpretation and reporting.

The host command stream is interpreted abstractly: DMA transfers occupy
the single DMA engine for ceil(bits/interconnect_width) cycles, `launch`
starts all cluster streams, `wait` joins the named engines/clusters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

import j3dsim.sim as _sim_pkg
from j3dsim import isa
from j3dsim.config import HardwareConfig, peak_macs_per_cycle
from j3dsim.sim import decode
from j3dsim.sim.core_py import (
    CNT_BANK,
    CNT_DMA_WAIT,
    CNT_DMPA_BUSY,
    CNT_DMPA_WAIT,
    CNT_MACS,
    CNT_OVF,
    CNT_SYNC,
    SimError,
)


@dataclass
class MachineState:
    l2: np.ndarray
    sram: np.ndarray
    acc: np.ndarray
    regs: np.ndarray

    @staticmethod
    def create(cfg: HardwareConfig) -> "MachineState":
        c, n, p = cfg.num_clusters, cfg.ncb_per_cluster, cfg.pes_per_ncb
        return MachineState(
            l2=np.zeros(cfg.l2_bytes, dtype=np.uint8),
            sram=np.zeros((c, n, cfg.ncb_sram_bytes), dtype=np.uint8),
            acc=np.zeros((c, n, p), dtype=np.int32),
            regs=np.zeros((c, n, p, 4), dtype=np.int32),
        )


@dataclass
class SimReport:
    total_cycles: int
    mac_ops_executed: int
    engine_busy: dict[str, int]
    stalls: dict[str, int]
    per_layer: dict[int, int] = field(default_factory=dict)
    accumulator_overflow: bool = False

    def to_json(self) -> str:
        d = {
            "total_cycles": self.total_cycles,
            "mac_ops_executed": self.mac_ops_executed,
            "engine_busy": self.engine_busy,
            "stalls": self.stalls,
            "per_layer": {str(k): v for k, v in self.per_layer.items()},
            "accumulator_overflow": self.accumulator_overflow,
        }
        return json.dumps(d, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "SimReport":
        d = json.loads(text)
        return SimReport(
            total_cycles=d["total_cycles"],
            mac_ops_executed=d["mac_ops_executed"],
            engine_busy=dict(d["engine_busy"]),
            stalls=dict(d["stalls"]),
            per_layer={int(k): v for k, v in d["per_layer"].items()},
            accumulator_overflow=d["accumulator_overflow"],
        )


def mac_efficiency(r: SimReport, cfg: HardwareConfig) -> float:
    """Executed MACs / (cycles x peak MACs per cycle), in percent."""
    if r.total_cycles <= 0:
        raise ValueError("zero-cycle report")
    return 100.0 * r.mac_ops_executed / (r.total_cycles * peak_macs_per_cycle(cfg))


def run(
    p: isa.Program,
    cfg: HardwareConfig,
    init: dict[str, np.ndarray] | np.ndarray | None = None,
    cycle_cap: int = 50_000_000,
) -> tuple[MachineState, SimReport]:
    """Simulate a Program. init is either a flat L2 byte image or a map of
    region name -> bytes placed at the region's declared offset."""
    state = MachineState.create(cfg)
    if isinstance(init, np.ndarray):
        if init.size > state.l2.size:
            raise SimError("init image larger than L2")
        state.l2[: init.size] = init
    elif init:
        for name, data in init.items():
            if name not in p.regions:
                raise SimError(f"init references undeclared region {name!r}")
            off, size = p.regions[name]
            flat = np.ascontiguousarray(data).reshape(-1).view(np.uint8)
            if flat.size > size:
                raise SimError(f"init for region {name!r} exceeds its size")
            state.l2[off : off + flat.size] = flat

    code, desc_meta, desc_cols, desc_dims, max_marker = decode.decode_program(p, cfg)
    counters = np.zeros(8, dtype=np.int64)
    marker_cycles = np.zeros(max_marker + 2, dtype=np.int64)

    host = list(p.host)
    if not any(cmd.op == "launch" for cmd in host) and any(p.clusters):
        host = [isa.HostCmd("launch", ()), isa.HostCmd("wait", ("clusters",))]

    host_time = 0
    dma_busy = 0
    dma_busy_cycles = 0
    cluster_end = 0
    dmpa_end = 0
    launched = False
    for cmd in host:
        if cmd.op == "dma":
            dst, src, n = cmd.args
            start = max(host_time, dma_busy)
            state.l2[dst : dst + n] = state.l2[src : src + n]
            dur = -(-n * 8 // cfg.interconnect_width_bits)
            dma_busy = start + dur
            dma_busy_cycles += dur
        elif cmd.op == "launch":
            launched = True
            cluster_end, dmpa_end = _sim_pkg.run_clusters_impl(
                code,
                desc_meta,
                desc_cols,
                desc_dims,
                state.l2,
                state.sram,
                state.acc,
                state.regs,
                host_time,
                dma_busy,
                counters,
                marker_cycles,
                cfg.ncb_per_cluster,
                cfg.pes_per_ncb,
                cfg.ncb_bank_bytes,
                cfg.ncb_sram_bytes,
                cycle_cap,
            )
        elif cmd.op == "wait":
            what = cmd.args[0]
            if what in ("dma", "all"):
                host_time = max(host_time, dma_busy)
            if what in ("clusters", "all") and launched:
                host_time = max(host_time, cluster_end)
            if what in ("dmpa", "all"):
                host_time = max(host_time, dmpa_end)

    total = max(host_time, cluster_end if launched else 0, dma_busy, dmpa_end)
    per_layer = {
        int(m): int(cyc) for m, cyc in enumerate(marker_cycles) if cyc > 0
    }
    report = SimReport(
        total_cycles=int(total),
        mac_ops_executed=int(counters[CNT_MACS]),
        engine_busy={"dmpa": int(counters[CNT_DMPA_BUSY]), "dma": int(dma_busy_cycles)},
        stalls={
            "bank_conflict": int(counters[CNT_BANK]),
            "dmpa_wait": int(counters[CNT_DMPA_WAIT]),
            "dma_wait": int(counters[CNT_DMA_WAIT]),
            "sync": int(counters[CNT_SYNC]),
        },
        per_layer=per_layer,
        accumulator_overflow=bool(counters[CNT_OVF]),
    )
    return state, report


def read_region(p: isa.Program, state: MachineState, name: str) -> np.ndarray:
    off, size = p.regions[name]
    return state.l2[off : off + size].copy()
