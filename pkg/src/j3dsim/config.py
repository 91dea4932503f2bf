"""Hardware description shared by every stage of the toolchain.

The default configuration models the published chip: 6 neural clusters of
16 neural computing blocks (NCBs) with 8 processing elements each, a 5 MB
L2 split across two dies, a 1024-bit column-parallel transfer engine (DMPA)
and a 64-bit system interconnect (DMA), clocked at 200 MHz.

Per-NCB SRAM capacity is not a published figure. The defaults (4 banks of
4096 bytes, 16 KiB per NCB) are declared assumptions, chosen small enough
to force tiling on real layers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class L2Partition:
    name: str
    bytes: int
    die: str  # "bottom" | "middle"


def _default_l2() -> tuple[L2Partition, ...]:
    return (
        L2Partition("l2_bottom", 3 * 1024 * 1024, "bottom"),
        L2Partition("l2_middle", 2 * 1024 * 1024, "middle"),
    )


@dataclass(frozen=True)
class HardwareConfig:
    num_clusters: int = 6
    ncb_per_cluster: int = 16
    pes_per_ncb: int = 8
    ncb_sram_banks: int = 4
    ncb_bank_bytes: int = 4096
    ncb_bank_width_bits: int = 64
    l2_partitions: tuple[L2Partition, ...] = field(default_factory=_default_l2)
    interconnect_width_bits: int = 64
    dmpa_width_bits: int = 1024
    host_imem_bytes: int = 256 * 1024
    host_dmem_bytes: int = 256 * 1024
    clock_hz: float = 2.0e8
    chip_area_mm2: float = 48.0

    @property
    def ncb_sram_bytes(self) -> int:
        return self.ncb_sram_banks * self.ncb_bank_bytes

    @property
    def l2_bytes(self) -> int:
        return sum(p.bytes for p in self.l2_partitions)


def j3dai_default() -> HardwareConfig:
    """Return the published chip configuration."""
    return HardwareConfig()


def peak_macs_per_cycle(cfg: HardwareConfig) -> int:
    """Peak multiply-accumulates per clock cycle across all clusters."""
    return cfg.num_clusters * cfg.ncb_per_cluster * cfg.pes_per_ncb


def validate(cfg: HardwareConfig) -> list[str]:
    """Check config invariants. Returns a list of violations (empty if ok)."""
    v: list[str] = []
    positive_int_fields = [
        "num_clusters",
        "ncb_per_cluster",
        "pes_per_ncb",
        "ncb_sram_banks",
        "ncb_bank_bytes",
        "ncb_bank_width_bits",
        "interconnect_width_bits",
        "dmpa_width_bits",
        "host_imem_bytes",
        "host_dmem_bytes",
    ]
    for name in positive_int_fields:
        value = getattr(cfg, name)
        if not isinstance(value, int) or value <= 0:
            v.append(f"{name} must be positive")
    if cfg.clock_hz <= 0:
        v.append("clock_hz must be positive")
    if cfg.chip_area_mm2 <= 0:
        v.append("chip_area_mm2 must be positive")
    if not cfg.l2_partitions:
        v.append("l2_partitions must be non-empty")
    for p in cfg.l2_partitions:
        if p.bytes <= 0:
            v.append(f"l2 partition {p.name!r}: bytes must be positive")
        if p.die not in ("bottom", "middle"):
            v.append(f"l2 partition {p.name!r}: die must be 'bottom' or 'middle'")
    if cfg.dmpa_width_bits != cfg.ncb_per_cluster * cfg.ncb_bank_width_bits:
        v.append(
            "dmpa_width_bits must equal ncb_per_cluster * ncb_bank_width_bits "
            f"({cfg.ncb_per_cluster} * {cfg.ncb_bank_width_bits} != {cfg.dmpa_width_bits})"
        )
    return v


_SCALAR_FIELDS = {
    "num_clusters",
    "ncb_per_cluster",
    "pes_per_ncb",
    "ncb_sram_banks",
    "ncb_bank_bytes",
    "ncb_bank_width_bits",
    "interconnect_width_bits",
    "dmpa_width_bits",
    "host_imem_bytes",
    "host_dmem_bytes",
    "clock_hz",
    "chip_area_mm2",
}


def to_json(cfg: HardwareConfig) -> str:
    d = asdict(cfg)
    d["l2_partitions"] = [asdict(p) for p in cfg.l2_partitions]
    return json.dumps(d, indent=2) + "\n"


def from_json(text: str) -> HardwareConfig:
    """Parse a config document. Unknown fields are rejected."""
    d = json.loads(text)
    if not isinstance(d, dict):
        raise ValueError("config document must be a JSON object")
    unknown = set(d) - _SCALAR_FIELDS - {"l2_partitions"}
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs = {k: d[k] for k in _SCALAR_FIELDS if k in d}
    if "l2_partitions" in d:
        parts = []
        for i, p in enumerate(d["l2_partitions"]):
            extra = set(p) - {"name", "bytes", "die"}
            if extra:
                raise ValueError(f"l2_partitions[{i}]: unknown fields {sorted(extra)}")
            parts.append(L2Partition(p["name"], p["bytes"], p["die"]))
        kwargs["l2_partitions"] = tuple(parts)
    return HardwareConfig(**kwargs)


def save(cfg: HardwareConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(to_json(cfg))


def load(path: str) -> HardwareConfig:
    with open(path) as f:
        return from_json(f.read())


def with_l2_bytes(cfg: HardwareConfig, bottom_bytes: int, middle_bytes: int) -> HardwareConfig:
    """Return a copy with resized L2 partitions (capacity studies)."""
    return replace(
        cfg,
        l2_partitions=(
            L2Partition("l2_bottom", bottom_bytes, "bottom"),
            L2Partition("l2_middle", middle_bytes, "middle"),
        ),
    )
