"""Instruction set, assembly text format, assembler and disassembler.

The microarchitecture it targets is published but its ISA is not; this one
is an original design expressing exactly the documented features: SIMD
broadcast over 16 NCBs x 8 PEs, 4-dimensional address generators with
post-increment, zero-overhead hardware loops (depth 4), a per-NCB multicast
register readable one cycle after MCAST, column-parallel DMPA block
transfers driven by a descriptor table, and host-side DMA.

Assembly grammar (one instruction or directive per line, ';' comments):

  .cluster <i>                     following instructions go to cluster i
  .region <name> <l2_off> <size>   named L2 region (symbol table)
  .desc <id> <l2s|s2l|fill> sram=<off> [value=<byte>] cols=<o0,o1,...>
        dims=(count,l2_stride,sram_stride)[,...up to 4, innermost first]
  .host dma <dst_l2> <src_l2> <nbytes>
  .host launch
  .host wait <dmpa|dma|clusters|all>

  SRAM operand:  [a<K>] or [a<K>+] (post-increment), suffixed v (per-lane,
  address+lane) or b (broadcast, same address for all lanes) where a data
  source needs the distinction. Other sources: mr, rN, acc, #imm.

Instruction operands are range-checked at assembly time against the
hardware config; AGU walks are checked to stay inside NCB SRAM.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from j3dsim.config import HardwareConfig

M0_LO, M0_HI = 1 << 30, 1 << 31

# source kinds for MAC/LDACC operands
SRC_SRAM, SRC_MR, SRC_IMM = 0, 1, 2
# ALU source kinds
ASRC_REG, ASRC_IMM, ASRC_SRAM = 0, 1, 2
ALU_OPS = ("add", "sub", "max", "min", "shl", "shr", "mov")
ACT_FUNCS = ("relu", "relu6", "sigq")
SYNC_DMPA, SYNC_DMA = 1, 2
ACC_REG = 4  # ALU dst index meaning the accumulator

DIR_L2S, DIR_S2L, DIR_FILL = 0, 1, 2
_DIR_NAMES = {DIR_L2S: "l2s", DIR_S2L: "s2l", DIR_FILL: "fill"}

OPS = (
    "HALT", "NOP", "BAR", "SYNC", "MARK", "CSRW", "CSRR", "LMASK",
    "AGU", "LOOP", "ENDL", "MAC", "LDACC", "RQS", "ALU", "MULQ",
    "ACT", "LD8", "LD32", "ST8", "ST32", "MCAST", "DMPA",
)
OPCODE = {name: i for i, name in enumerate(OPS)}


class AsmError(ValueError):
    pass


@dataclass(frozen=True)
class Instr:
    op: str
    args: tuple = ()


@dataclass(frozen=True)
class Desc:
    """DMPA transfer descriptor.

    direction l2s: L2 -> SRAM column-parallel; s2l: SRAM -> L2;
    fill: write a constant byte along the L2 walk (pad materialization).
    cols: per-column L2 base offsets (column j serves NCB j).
    dims: up to 4 (count, l2_stride, sram_stride), innermost first.
    """

    direction: int
    sram_base: int
    cols: tuple[int, ...]
    dims: tuple[tuple[int, int, int], ...]
    fill_value: int = 0

    @property
    def elems_per_col(self) -> int:
        n = 1
        for count, _, _ in self.dims:
            n *= count
        return n

    @property
    def total_bytes(self) -> int:
        return len(self.cols) * self.elems_per_col


@dataclass(frozen=True)
class HostCmd:
    op: str  # "dma" | "launch" | "wait"
    args: tuple = ()


@dataclass
class Program:
    num_clusters: int
    clusters: list[list[Instr]]
    descs: dict[int, Desc] = field(default_factory=dict)
    host: list[HostCmd] = field(default_factory=list)
    regions: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.num_clusters == other.num_clusters
            and self.clusters == other.clusters
            and self.descs == other.descs
            and self.host == other.host
            and self.regions == other.regions
        )


# ------------------------------------------------------------ construction

def agu_cfg(idx: int, base: int, *dims: tuple[int, int]) -> Instr:
    """AGU_CFG with up to 4 (stride, extent) pairs, innermost first."""
    padded = list(dims) + [(0, 1)] * (4 - len(dims))
    args = [idx, base]
    for s, e in padded:
        args += [s, e]
    return Instr("AGU", tuple(args))


def mac(a, b) -> Instr:
    """a, b are ('sram', agu, mode, inc) | ('mr',) | ('imm', value)."""
    return Instr("MAC", _src(a) + _src(b))


def _src(s) -> tuple:
    if s[0] == "sram":
        _, agu, mode, inc = s
        return (SRC_SRAM, agu, 0 if mode == "b" else 1, 1 if inc else 0, 0)
    if s[0] == "mr":
        return (SRC_MR, 0, 0, 0, 0)
    if s[0] == "imm":
        return (SRC_IMM, 0, 0, 0, int(s[1]))
    raise AsmError(f"bad operand source {s!r}")


# --------------------------------------------------------------- assembler

_SRAM_RE = re.compile(r"^\[a(\d)(\+?)\](v|b)?(?:\.(u8|i32))?$")


def _parse_int(tok: str, where: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"{where}: expected integer, got {tok!r}") from None


def _parse_sram(tok: str, where: str, need_mode=False):
    m = _SRAM_RE.match(tok)
    if not m:
        raise AsmError(f"{where}: expected SRAM operand like [a0+]v, got {tok!r}")
    agu, inc, mode, width = int(m.group(1)), m.group(2) == "+", m.group(3), m.group(4)
    if agu > 3:
        raise AsmError(f"{where}: AGU index {agu} out of range (0..3)")
    if need_mode and mode is None:
        raise AsmError(f"{where}: operand {tok!r} needs a v/b mode suffix")
    return agu, mode or "v", inc, width


def _split_operands(rest: str) -> list[str]:
    return [t.strip() for t in rest.split(",")] if rest.strip() else []


def assemble(text: str, cfg: HardwareConfig) -> Program:
    """Assemble source text into a Program, range-checking every operand
    against cfg. Errors carry the 1-based line number."""
    clusters: list[list[Instr]] = [[] for _ in range(cfg.num_clusters)]
    descs: dict[int, Desc] = {}
    host: list[HostCmd] = []
    regions: dict[str, tuple[int, int]] = {}
    current = 0
    loop_stack_depth: dict[int, list[int]] = {i: [] for i in range(cfg.num_clusters)}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        try:
            if line.startswith("."):
                _directive(line, where, cfg, descs, host, regions)
                if line.startswith(".cluster"):
                    current = _parse_int(line.split()[1], where)
                    if not 0 <= current < cfg.num_clusters:
                        raise AsmError(f"{where}: cluster {current} out of range")
                continue
            instr = _parse_instr(line, where, cfg, descs)
            if instr.op == "LOOP":
                loop_stack_depth[current].append(len(clusters[current]))
                if len(loop_stack_depth[current]) > 4:
                    raise AsmError(f"{where}: loop nesting depth exceeds 4")
            elif instr.op == "ENDL":
                if not loop_stack_depth[current]:
                    raise AsmError(f"{where}: ENDL without matching LOOP")
                start = loop_stack_depth[current].pop()
                if len(clusters[current]) == start + 1:
                    raise AsmError(f"{where}: empty LOOP body")
            clusters[current].append(instr)
        except AsmError:
            raise
        except (ValueError, IndexError) as exc:
            raise AsmError(f"{where}: {exc}") from exc

    for ci, stack in loop_stack_depth.items():
        if stack:
            raise AsmError(f"cluster {ci}: unterminated LOOP")
    for ci, stream in enumerate(clusters):
        if stream and stream[-1].op != "HALT":
            raise AsmError(f"cluster {ci}: stream must end in HALT")
    return Program(cfg.num_clusters, clusters, descs, host, regions)


def _directive(line, where, cfg, descs, host, regions):
    parts = line.split()
    if parts[0] == ".cluster":
        return  # handled by caller
    if parts[0] == ".region":
        if len(parts) != 4:
            raise AsmError(f"{where}: .region <name> <offset> <size>")
        name, off, size = parts[1], _parse_int(parts[2], where), _parse_int(parts[3], where)
        if off < 0 or size < 0 or off + size > cfg.l2_bytes:
            raise AsmError(f"{where}: region {name!r} outside L2 ({cfg.l2_bytes} bytes)")
        regions[name] = (off, size)
        return
    if parts[0] == ".desc":
        _parse_desc(parts, where, cfg, descs)
        return
    if parts[0] == ".host":
        if parts[1] == "dma":
            dst, src, n = (_parse_int(p, where) for p in parts[2:5])
            for v, nm in ((dst, "dst"), (src, "src")):
                if not 0 <= v < cfg.l2_bytes:
                    raise AsmError(f"{where}: dma {nm} outside L2")
            if n <= 0 or max(dst, src) + n > cfg.l2_bytes:
                raise AsmError(f"{where}: dma transfer outside L2")
            host.append(HostCmd("dma", (dst, src, n)))
        elif parts[1] == "launch":
            host.append(HostCmd("launch", ()))
        elif parts[1] == "wait":
            what = parts[2]
            if what not in ("dmpa", "dma", "clusters", "all"):
                raise AsmError(f"{where}: bad wait target {what!r}")
            host.append(HostCmd("wait", (what,)))
        else:
            raise AsmError(f"{where}: unknown host command {parts[1]!r}")
        return
    raise AsmError(f"{where}: unknown directive {parts[0]!r}")


def _parse_desc(parts, where, cfg, descs):
    did = _parse_int(parts[1], where)
    if did in descs:
        raise AsmError(f"{where}: duplicate descriptor id {did}")
    dirname = parts[2]
    direction = {v: k for k, v in _DIR_NAMES.items()}.get(dirname)
    if direction is None:
        raise AsmError(f"{where}: bad descriptor direction {dirname!r}")
    kv = {}
    for tok in parts[3:]:
        key, _, val = tok.partition("=")
        kv[key] = val
    sram_base = _parse_int(kv.get("sram", "0"), where)
    fill_value = _parse_int(kv.get("value", "0"), where)
    cols = tuple(_parse_int(c, where) for c in kv["cols"].split(","))
    dims = []
    for m in re.finditer(r"\(([^)]*)\)", kv.get("dims", "")):
        count, l2s, srs = (_parse_int(x.strip(), where) for x in m.group(1).split(","))
        dims.append((count, l2s, srs))
    if not dims:
        raise AsmError(f"{where}: descriptor needs dims")
    d = Desc(direction, sram_base, cols, tuple(dims), fill_value)
    err = check_desc(d, cfg)
    if err:
        raise AsmError(f"{where}: {err}")
    descs[did] = d


def check_desc(d: Desc, cfg: HardwareConfig) -> str | None:
    if not 1 <= len(d.cols) <= cfg.ncb_per_cluster:
        return f"descriptor must have 1..{cfg.ncb_per_cluster} columns"
    if len(d.dims) > 4:
        return "descriptor has more than 4 dims"
    if not 0 <= d.fill_value <= 255:
        return "fill value must be a byte"
    l2_span = sum(s * (c - 1) for c, s, _ in d.dims)
    sram_span = sum(s * (c - 1) for c, _, s in d.dims)
    for count, l2s, srs in d.dims:
        if count < 1 or l2s < 0 or srs < 0:
            return "descriptor dims must have count>=1 and non-negative strides"
    for base in d.cols:
        if base < 0 or base + l2_span >= cfg.l2_bytes:
            return f"descriptor L2 walk out of range (base {base})"
    if d.direction != DIR_FILL:
        if d.sram_base < 0 or d.sram_base + sram_span >= cfg.ncb_sram_bytes:
            return "descriptor SRAM walk out of range"
    return None


def _check_agu_walk(args, where, cfg):
    idx, base = args[0], args[1]
    if not 0 <= idx < 4:
        raise AsmError(f"{where}: AGU index {idx} out of range")
    span = 0
    for k in range(4):
        stride, extent = args[2 + 2 * k], args[3 + 2 * k]
        if stride < 0 or extent < 1:
            raise AsmError(f"{where}: AGU dims need stride>=0 and extent>=1")
        span += stride * (extent - 1)
    if base < 0 or base + span >= cfg.ncb_sram_bytes:
        raise AsmError(
            f"{where}: AGU walk [{base}, {base + span}] outside NCB SRAM "
            f"({cfg.ncb_sram_bytes} bytes)"
        )


def _reg(tok, where, allow_acc=False) -> int:
    if allow_acc and tok == "acc":
        return ACC_REG
    m = re.match(r"^r(\d)$", tok)
    if not m or int(m.group(1)) > 3:
        raise AsmError(f"{where}: expected register r0..r3, got {tok!r}")
    return int(m.group(1))


def _parse_instr(line, where, cfg, descs) -> Instr:
    mnem, _, rest = line.partition(" ")
    op = mnem.upper()
    ops = _split_operands(rest)
    if op in ("HALT", "NOP", "BAR", "ENDL"):
        if ops:
            raise AsmError(f"{where}: {op} takes no operands")
        return Instr(op)
    if op == "SYNC":
        mask = {"dmpa": SYNC_DMPA, "dma": SYNC_DMA, "all": SYNC_DMPA | SYNC_DMA}.get(ops[0])
        if mask is None:
            raise AsmError(f"{where}: SYNC target must be dmpa|dma|all")
        return Instr(op, (mask,))
    if op == "MARK":
        return Instr(op, (_parse_int(ops[0], where),))
    if op == "CSRW":
        return Instr(op, (_parse_int(ops[0], where), _parse_int(ops[1], where)))
    if op == "CSRR":
        return Instr(op, (_reg(ops[0], where), _parse_int(ops[1], where)))
    if op == "LMASK":
        n_ncb, n_pe = _parse_int(ops[0], where), _parse_int(ops[1], where)
        if not (1 <= n_ncb <= cfg.ncb_per_cluster and 1 <= n_pe <= cfg.pes_per_ncb):
            raise AsmError(f"{where}: LMASK {n_ncb},{n_pe} out of range")
        return Instr(op, (n_ncb, n_pe))
    if op == "AGU":
        m = re.match(r"^a(\d)$", ops[0])
        if not m:
            raise AsmError(f"{where}: AGU needs an a<K> target")
        args = [int(m.group(1)), _parse_int(ops[1], where)]
        pairs = []
        for tok in ops[2:]:
            s, _, e = tok.partition(":")
            pairs.append((_parse_int(s, where), _parse_int(e, where)))
        if len(pairs) > 4:
            raise AsmError(f"{where}: AGU supports at most 4 dims")
        pairs += [(0, 1)] * (4 - len(pairs))
        for s, e in pairs:
            args += [s, e]
        _check_agu_walk(args, where, cfg)
        return Instr(op, tuple(args))
    if op == "LOOP":
        n = _parse_int(ops[0], where)
        if n < 1:
            raise AsmError(f"{where}: LOOP count must be >= 1")
        return Instr(op, (n,))
    if op == "MAC":
        return Instr(op, _parse_mac_src(ops[0], where, signed=False)
                     + _parse_mac_src(ops[1], where, signed=True))
    if op == "LDACC":
        if ops[0].startswith("#"):
            return Instr(op, (SRC_IMM, 0, 0, _parse_int(ops[0][1:], where)))
        agu, _, inc, _ = _parse_sram(ops[0], where)
        return Instr(op, (SRC_SRAM, agu, 1 if inc else 0, 0))
    if op == "RQS":
        agu, _, inc, _ = _parse_sram(ops[0], where)
        m0, shift, zp, lo, hi = (_parse_int(t, where) for t in ops[1:6])
        if not M0_LO <= m0 < M0_HI:
            raise AsmError(f"{where}: RQS m0 {m0} outside [2^30, 2^31)")
        if not (0 <= zp <= 255 and 0 <= lo <= hi <= 255):
            raise AsmError(f"{where}: RQS clamp/zp must be bytes with lo<=hi")
        return Instr(op, (agu, 1 if inc else 0, m0, shift, zp, lo, hi))
    if op == "ALU":
        aluop = ops[0].lower()
        if aluop not in ALU_OPS:
            raise AsmError(f"{where}: unknown ALU op {aluop!r}")
        dst = _reg(ops[1], where, allow_acc=True)
        src = ops[2]
        if src.startswith("#"):
            return Instr(op, (ALU_OPS.index(aluop), dst, ASRC_IMM, 0, 0, 0, 0,
                              _parse_int(src[1:], where)))
        if src == "acc" or re.match(r"^r\d$", src):
            return Instr(op, (ALU_OPS.index(aluop), dst, ASRC_REG,
                              _reg(src, where, allow_acc=True), 0, 0, 0, 0))
        agu, _, inc, width = _parse_sram(src, where)
        w = 1 if width == "i32" else 0
        return Instr(op, (ALU_OPS.index(aluop), dst, ASRC_SRAM, 0, agu,
                          1 if inc else 0, w, 0))
    if op == "MULQ":
        dst = _reg(ops[0], where, allow_acc=True)
        m0, shift = _parse_int(ops[1], where), _parse_int(ops[2], where)
        if not M0_LO <= m0 < M0_HI:
            raise AsmError(f"{where}: MULQ m0 {m0} outside [2^30, 2^31)")
        return Instr(op, (dst, m0, shift))
    if op == "ACT":
        func = ops[0].lower()
        if func not in ACT_FUNCS:
            raise AsmError(f"{where}: unknown ACT function {func!r}")
        dst = _reg(ops[1], where, allow_acc=True)
        p1 = _parse_int(ops[2], where) if len(ops) > 2 else 0
        p2 = _parse_int(ops[3], where) if len(ops) > 3 else 0
        return Instr(op, (ACT_FUNCS.index(func), dst, p1, p2))
    if op in ("LD8", "LD32"):
        dst = _reg(ops[0], where)
        agu, _, inc, _ = _parse_sram(ops[1], where)
        return Instr(op, (dst, agu, 1 if inc else 0))
    if op in ("ST8", "ST32"):
        agu, _, inc, _ = _parse_sram(ops[0], where)
        src = _reg(ops[1], where, allow_acc=True)
        return Instr(op, (agu, 1 if inc else 0, src))
    if op == "MCAST":
        src_ncb = _parse_int(ops[0], where)
        if not 0 <= src_ncb < cfg.ncb_per_cluster:
            raise AsmError(f"{where}: MCAST source NCB {src_ncb} out of range")
        agu, _, inc, _ = _parse_sram(ops[1], where)
        return Instr(op, (src_ncb, agu, 1 if inc else 0))
    if op == "DMPA":
        m = re.match(r"^d(\d+)$", ops[0])
        if not m:
            raise AsmError(f"{where}: DMPA needs a descriptor id like d3")
        did = int(m.group(1))
        if did not in descs:
            raise AsmError(f"{where}: descriptor d{did} not declared")
        return Instr(op, (did,))
    raise AsmError(f"{where}: unknown mnemonic {mnem!r}")


def _parse_mac_src(tok, where, signed: bool) -> tuple:
    if tok == "mr":
        return (SRC_MR, 0, 0, 0, 0)
    if tok.startswith("#"):
        v = _parse_int(tok[1:], where)
        lo, hi = (-128, 127) if signed else (0, 255)
        if not lo <= v <= hi:
            raise AsmError(f"{where}: MAC immediate {v} outside [{lo}, {hi}]")
        return (SRC_IMM, 0, 0, 0, v)
    agu, mode, inc, _ = _parse_sram(tok, where, need_mode=True)
    return (SRC_SRAM, agu, 0 if mode == "b" else 1, 1 if inc else 0, 0)


# ------------------------------------------------------------ disassembler

def _fmt_sram(agu, inc, mode=None, width=None) -> str:
    s = f"[a{agu}{'+' if inc else ''}]"
    if mode is not None:
        s += mode
    if width is not None:
        s += f".{width}"
    return s


def _fmt_mac_src(kind, agu, mode, inc, imm) -> str:
    if kind == SRC_MR:
        return "mr"
    if kind == SRC_IMM:
        return f"#{imm}"
    return _fmt_sram(agu, inc, "v" if mode else "b")


def _fmt_reg(r) -> str:
    return "acc" if r == ACC_REG else f"r{r}"


def _fmt_instr(i: Instr) -> str:
    a = i.args
    if i.op in ("HALT", "NOP", "BAR", "ENDL"):
        return i.op
    if i.op == "SYNC":
        return "SYNC " + {SYNC_DMPA: "dmpa", SYNC_DMA: "dma",
                          SYNC_DMPA | SYNC_DMA: "all"}[a[0]]
    if i.op == "MARK":
        return f"MARK {a[0]}"
    if i.op == "CSRW":
        return f"CSRW {a[0]}, {a[1]}"
    if i.op == "CSRR":
        return f"CSRR r{a[0]}, {a[1]}"
    if i.op == "LMASK":
        return f"LMASK {a[0]}, {a[1]}"
    if i.op == "AGU":
        pairs = [f"{a[2 + 2 * k]}:{a[3 + 2 * k]}" for k in range(4)]
        while len(pairs) > 1 and pairs[-1] == "0:1":
            pairs.pop()
        return f"AGU a{a[0]}, {a[1]}, " + ", ".join(pairs)
    if i.op == "LOOP":
        return f"LOOP {a[0]}"
    if i.op == "MAC":
        return f"MAC {_fmt_mac_src(*a[:5])}, {_fmt_mac_src(*a[5:])}"
    if i.op == "LDACC":
        if a[0] == SRC_IMM:
            return f"LDACC #{a[3]}"
        return f"LDACC {_fmt_sram(a[1], a[2])}"
    if i.op == "RQS":
        return f"RQS {_fmt_sram(a[0], a[1])}, {a[2]}, {a[3]}, {a[4]}, {a[5]}, {a[6]}"
    if i.op == "ALU":
        aluop, dst, kind = ALU_OPS[a[0]], _fmt_reg(a[1]), a[2]
        if kind == ASRC_IMM:
            src = f"#{a[7]}"
        elif kind == ASRC_REG:
            src = _fmt_reg(a[3])
        else:
            src = _fmt_sram(a[4], a[5], width="i32" if a[6] else "u8")
        return f"ALU {aluop}, {dst}, {src}"
    if i.op == "MULQ":
        return f"MULQ {_fmt_reg(a[0])}, {a[1]}, {a[2]}"
    if i.op == "ACT":
        return f"ACT {ACT_FUNCS[a[0]]}, {_fmt_reg(a[1])}, {a[2]}, {a[3]}"
    if i.op in ("LD8", "LD32"):
        return f"{i.op} r{a[0]}, {_fmt_sram(a[1], a[2])}"
    if i.op in ("ST8", "ST32"):
        return f"{i.op} {_fmt_sram(a[0], a[1])}, {_fmt_reg(a[2])}"
    if i.op == "MCAST":
        return f"MCAST {a[0]}, {_fmt_sram(a[1], a[2])}"
    if i.op == "DMPA":
        return f"DMPA d{a[0]}"
    raise AsmError(f"cannot format {i.op!r}")


def disassemble(p: Program) -> str:
    """Canonical assembly text; assemble(disassemble(p)) == p."""
    lines: list[str] = []
    for name in sorted(p.regions):
        off, size = p.regions[name]
        lines.append(f".region {name} {off} {size}")
    for did in sorted(p.descs):
        d = p.descs[did]
        parts = [f".desc {did} {_DIR_NAMES[d.direction]}", f"sram={d.sram_base}"]
        if d.direction == DIR_FILL:
            parts.append(f"value={d.fill_value}")
        parts.append("cols=" + ",".join(str(c) for c in d.cols))
        parts.append("dims=" + ",".join(f"({c},{l},{s})" for c, l, s in d.dims))
        lines.append(" ".join(parts))
    for cmd in p.host:
        if cmd.op == "dma":
            lines.append(f".host dma {cmd.args[0]} {cmd.args[1]} {cmd.args[2]}")
        elif cmd.op == "launch":
            lines.append(".host launch")
        else:
            lines.append(f".host wait {cmd.args[0]}")
    for ci, stream in enumerate(p.clusters):
        if not stream:
            continue
        lines.append(f".cluster {ci}")
        depth = 0
        for instr in stream:
            if instr.op == "ENDL":
                depth -= 1
            lines.append("  " * depth + _fmt_instr(instr))
            if instr.op == "LOOP":
                depth += 1
    return "\n".join(lines) + "\n"


# --------------------------------------------------------- binary encoding

_MAGIC = b"J3DP"


def encode(p: Program) -> bytes:
    """Binary form: 32-bit words, 8-bit opcode in the first word's low
    byte plus an operand-word count; wide operands take extension words."""
    out = bytearray(_MAGIC)
    out += struct.pack("<I", p.num_clusters)

    def pack_str(s: str):
        b = s.encode()
        out.extend(struct.pack("<I", len(b)))
        out.extend(b)

    out += struct.pack("<I", len(p.regions))
    for name in sorted(p.regions):
        pack_str(name)
        out += struct.pack("<ii", *p.regions[name])
    out += struct.pack("<I", len(p.descs))
    for did in sorted(p.descs):
        d = p.descs[did]
        out += struct.pack("<IIiiI", did, d.direction, d.sram_base, d.fill_value, len(d.cols))
        out += struct.pack(f"<{len(d.cols)}i", *d.cols)
        out += struct.pack("<I", len(d.dims))
        for dim in d.dims:
            out += struct.pack("<iii", *dim)
    out += struct.pack("<I", len(p.host))
    for cmd in p.host:
        if cmd.op == "dma":
            out += struct.pack("<Iiii", 0, *cmd.args)
        elif cmd.op == "launch":
            out += struct.pack("<I", 1)
        else:
            out += struct.pack("<II", 2, ("dmpa", "dma", "clusters", "all").index(cmd.args[0]))
    for stream in p.clusters:
        out += struct.pack("<I", len(stream))
        for instr in stream:
            out += struct.pack("<I", OPCODE[instr.op] | (len(instr.args) << 8))
            out += struct.pack(f"<{len(instr.args)}i", *instr.args)
    return bytes(out)


def decode(blob: bytes) -> Program:
    if blob[:4] != _MAGIC:
        raise AsmError("bad program magic")
    pos = 4

    def u32():
        nonlocal pos
        (v,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        return v

    def i32s(n):
        nonlocal pos
        vals = struct.unpack_from(f"<{n}i", blob, pos)
        pos += 4 * n
        return vals

    def rd_str():
        nonlocal pos
        n = u32()
        s = blob[pos : pos + n].decode()
        pos += n
        return s

    num_clusters = u32()
    regions = {}
    for _ in range(u32()):
        name = rd_str()
        off, size = i32s(2)
        regions[name] = (off, size)
    descs = {}
    for _ in range(u32()):
        did, direction = u32(), u32()
        sram_base, fill_value = i32s(2)
        cols = tuple(i32s(u32()))
        dims = tuple(tuple(i32s(3)) for _ in range(u32()))
        descs[did] = Desc(direction, sram_base, cols, dims, fill_value)
    host = []
    for _ in range(u32()):
        kind = u32()
        if kind == 0:
            host.append(HostCmd("dma", tuple(i32s(3))))
        elif kind == 1:
            host.append(HostCmd("launch", ()))
        else:
            host.append(HostCmd("wait", (("dmpa", "dma", "clusters", "all")[u32()],)))
    clusters = []
    for _ in range(num_clusters):
        stream = []
        for _ in range(u32()):
            word = u32()
            op, nargs = OPS[word & 0xFF], word >> 8
            stream.append(Instr(op, tuple(i32s(nargs))))
        clusters.append(stream)
    return Program(num_clusters, clusters, descs, host, regions)
