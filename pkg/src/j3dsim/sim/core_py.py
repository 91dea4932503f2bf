"""Pure-Python simulator core.

Semantics must stay bit-identical to the compiled core (_core.pyx); the
test suite cross-checks the two on every fixture. Vectorization is over
the (NCB, PE) lane grid; the cycle loop is interpreted per cluster.

Cost model: one instruction per cluster per cycle; LOOP bodies re-issue
with zero overhead (ENDL is free); DMPA transfers occupy the single DMPA
engine for ceil(bits/1024) cycles, concurrent with compute except that a
cycle where compute touches an SRAM bank of the active transfer stalls the
cluster one cycle; MCAST results land in the multicast register the next
cycle; SYNC stalls until the named engines are idle; BAR is an
inter-cluster rendezvous.
"""

from __future__ import annotations

import numpy as np

from j3dsim import isa

_OP = isa.OPCODE
OP_HALT = _OP["HALT"]
OP_NOP = _OP["NOP"]
OP_BAR = _OP["BAR"]
OP_SYNC = _OP["SYNC"]
OP_MARK = _OP["MARK"]
OP_CSRW = _OP["CSRW"]
OP_CSRR = _OP["CSRR"]
OP_LMASK = _OP["LMASK"]
OP_AGU = _OP["AGU"]
OP_LOOP = _OP["LOOP"]
OP_ENDL = _OP["ENDL"]
OP_MAC = _OP["MAC"]
OP_LDACC = _OP["LDACC"]
OP_RQS = _OP["RQS"]
OP_ALU = _OP["ALU"]
OP_MULQ = _OP["MULQ"]
OP_ACT = _OP["ACT"]
OP_LD8 = _OP["LD8"]
OP_LD32 = _OP["LD32"]
OP_ST8 = _OP["ST8"]
OP_ST32 = _OP["ST32"]
OP_MCAST = _OP["MCAST"]
OP_DMPA = _OP["DMPA"]

_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1

# counters layout shared with the compiled core
CNT_MACS, CNT_BANK, CNT_DMPA_WAIT, CNT_DMA_WAIT, CNT_SYNC, CNT_OVF, CNT_DMPA_BUSY = range(7)


class SimError(RuntimeError):
    pass


def _wrap32(x):
    return ((x + 2**31) & 0xFFFFFFFF) - 2**31


def _rescale(v, m0, shift):
    prod = v * np.int64(m0)
    k = 30 + shift
    if k <= 0:
        return prod << (-k)
    half = np.int64(1) << (k - 1)
    return np.sign(prod) * ((np.abs(prod) + half) >> k)


class _Cluster:
    __slots__ = (
        "code", "pc", "status", "nn", "npes", "marker", "csr",
        "agu", "ctr", "cur", "loop_start", "loop_rem", "sp",
        "mr", "mr_pend", "mr_pend_cycle",
    )

    def __init__(self, code, ncb, pes):
        self.code = code
        self.pc = 0
        self.status = 0  # 0 running, 1 barrier wait, 2 halted
        self.nn = ncb
        self.npes = pes
        self.marker = 0
        self.csr = np.zeros(32, dtype=np.int64)
        self.agu = np.zeros((4, 10), dtype=np.int64)  # base, (stride, extent) x4
        self.agu[:, 2::2] = 1
        self.ctr = np.zeros((4, 4), dtype=np.int64)
        self.cur = np.zeros(4, dtype=np.int64)
        self.loop_start = np.zeros(4, dtype=np.int64)
        self.loop_rem = np.zeros(4, dtype=np.int64)
        self.sp = 0
        self.mr = np.zeros(ncb, dtype=np.int64)
        self.mr_pend = None
        self.mr_pend_cycle = -1

    def agu_advance(self, idx):
        a = self.agu[idx]
        ctr = self.ctr[idx]
        for k in range(4):
            ctr[k] += 1
            if ctr[k] < a[2 + 2 * k]:
                break
            ctr[k] = 0
        self.cur[idx] = a[0] + int(ctr[0] * a[1] + ctr[1] * a[3] + ctr[2] * a[5] + ctr[3] * a[7])

    def agu_set(self, args):
        idx = args[0]
        self.agu[idx, 0] = args[1]
        for k in range(4):
            self.agu[idx, 1 + 2 * k] = args[2 + 2 * k]  # stride
            self.agu[idx, 2 + 2 * k] = args[3 + 2 * k]  # extent
        self.ctr[idx] = 0
        self.cur[idx] = args[1]


def run_clusters(code_list, desc_meta, desc_cols, desc_dims, l2, sram, acc, regs,
                 start_cycle, dma_busy_until, counters, marker_cycles,
                 ncb, pes, bank_bytes, sram_bytes, cycle_cap):
    """Execute all cluster streams from start_cycle until every cluster
    halts. Returns (end_cycle, dmpa_busy_until)."""
    ncl = len(code_list)
    cl = [_Cluster(code_list[c], ncb, pes) for c in range(ncl)]
    cycle = start_cycle
    dmpa_busy_until = start_cycle
    dmpa_cluster = -1
    dmpa_bank_lo = dmpa_bank_hi = -1

    def err(c, pc, msg):
        raise SimError(f"cluster {c} pc {pc}: {msg}")

    def settle(c, s):
        # HALT and loop back-edges are zero-cost
        while s.status == 0:
            op = int(s.code[s.pc][0])
            if op == OP_HALT:
                s.status = 2
            elif op == OP_ENDL:
                if s.sp == 0:
                    err(c, s.pc, "ENDL with empty loop stack")
                s.loop_rem[s.sp - 1] -= 1
                if s.loop_rem[s.sp - 1] > 0:
                    s.pc = int(s.loop_start[s.sp - 1])
                else:
                    s.sp -= 1
                    s.pc += 1
            else:
                break

    while True:
        for c, s in enumerate(cl):
            if s.status == 0:
                settle(c, s)
        alive = [s for s in cl if s.status != 2]
        if not alive:
            break
        if all(s.status == 1 for s in alive):
            for s in alive:
                s.status = 0
            continue
        if cycle - start_cycle > cycle_cap:
            raise SimError(f"watchdog: exceeded cycle cap {cycle_cap}")
        marker_cycles[min(s.marker for s in alive)] += 1

        for c, s in enumerate(cl):
            if s.status == 2:
                continue
            if s.status == 1:
                counters[CNT_SYNC] += 1
                continue
            if s.mr_pend is not None and cycle >= s.mr_pend_cycle:
                s.mr[:] = s.mr_pend
                s.mr_pend = None
            row = s.code[s.pc]
            op = int(row[0])
            a = row

            # bank-conflict stall: compute access vs active DMPA transfer
            if dmpa_cluster == c and cycle < dmpa_busy_until and dmpa_bank_lo >= 0:
                span = _access_bank_span(s, op, a, pes)
                if span is not None and any(
                    lo // bank_bytes <= dmpa_bank_hi
                    and hi // bank_bytes >= dmpa_bank_lo
                    for lo, hi in span
                ):
                    counters[CNT_BANK] += 1
                    continue

            if op == OP_NOP:
                s.pc += 1
                continue
            if op == OP_BAR:
                s.status = 1
                s.pc += 1
                continue
            if op == OP_SYNC:
                mask = int(a[1])
                if (mask & isa.SYNC_DMPA and cycle < dmpa_busy_until) or (
                    mask & isa.SYNC_DMA and cycle < dma_busy_until
                ):
                    counters[CNT_SYNC] += 1
                    continue
                s.pc += 1
                continue
            if op == OP_MARK:
                s.marker = int(a[1])
                s.csr[16] = a[1]
                s.pc += 1
                continue
            if op == OP_CSRW:
                s.csr[int(a[1]) & 31] = a[2]
                if int(a[1]) == 16:
                    s.marker = int(a[2])
                s.pc += 1
                continue
            if op == OP_CSRR:
                regs[c, : s.nn, : s.npes, int(a[1])] = _wrap32(int(s.csr[int(a[2]) & 31]))
                s.pc += 1
                continue
            if op == OP_LMASK:
                s.nn, s.npes = int(a[1]), int(a[2])
                s.pc += 1
                continue
            if op == OP_AGU:
                s.agu_set(a[1:11])
                s.pc += 1
                continue
            if op == OP_LOOP:
                if s.sp >= 4:
                    err(c, s.pc, "loop nesting exceeds 4")
                s.loop_start[s.sp] = s.pc + 1
                s.loop_rem[s.sp] = a[1]
                s.sp += 1
                s.pc += 1
                continue
            if op == OP_DMPA:
                if cycle < dmpa_busy_until:
                    counters[CNT_DMPA_WAIT] += 1
                    continue
                did = int(a[1])
                _do_dmpa(l2, sram, c, did, desc_meta, desc_cols, desc_dims)
                dur = int(desc_meta[did, 7])
                dmpa_busy_until = cycle + dur
                counters[CNT_DMPA_BUSY] += dur
                if desc_meta[did, 0] == isa.DIR_FILL:
                    dmpa_cluster, dmpa_bank_lo, dmpa_bank_hi = -1, -1, -1
                else:
                    dmpa_cluster = c
                    dmpa_bank_lo = int(desc_meta[did, 5]) // bank_bytes
                    dmpa_bank_hi = int(desc_meta[did, 6]) // bank_bytes
                s.pc += 1
                continue

            _exec_lane_op(s, c, op, a, sram, acc, regs, counters, cycle, sram_bytes, err)
            s.pc += 1
        cycle += 1
    return cycle, dmpa_busy_until


def _access_bank_span(s, op, a, pes):
    """Byte ranges in NCB SRAM touched by a compute instruction, as a
    tuple of (lo, hi) pairs, or None. A MAC reading from two AGUs yields
    one range per operand; banks between them are not accessed."""
    if op == OP_MAC:
        spans = []
        for base in (1, 6):
            if a[base] == isa.SRC_SRAM:
                cur = int(s.cur[int(a[base + 1])])
                width = s.npes if a[base + 2] else 1
                spans.append((cur, cur + width - 1))
        return tuple(spans) or None
    if op == OP_LDACC and a[1] == isa.SRC_SRAM:
        cur = int(s.cur[int(a[2])])
        return ((cur, cur + 4 * s.npes - 1),)
    if op == OP_RQS:
        cur = int(s.cur[int(a[1])])
        return ((cur, cur + s.npes - 1),)
    if op == OP_ALU and a[3] == isa.ASRC_SRAM:
        cur = int(s.cur[int(a[5])])
        w = 4 if a[7] else 1
        return ((cur, cur + w * s.npes - 1),)
    if op in (OP_LD8, OP_ST8):
        idx = int(a[2]) if op == OP_LD8 else int(a[1])
        cur = int(s.cur[idx])
        return ((cur, cur + s.npes - 1),)
    if op in (OP_LD32, OP_ST32):
        idx = int(a[2]) if op == OP_LD32 else int(a[1])
        cur = int(s.cur[idx])
        return ((cur, cur + 4 * s.npes - 1),)
    if op == OP_MCAST:
        cur = int(s.cur[int(a[2])])
        return ((cur, cur),)
    return None


def _fetch_mac_src(s, c, a, base, sram, signed, sram_bytes, err):
    kind = int(a[base])
    nn, npes = s.nn, s.npes
    if kind == isa.SRC_IMM:
        return np.full((nn, npes), int(a[base + 4]), dtype=np.int64), None
    if kind == isa.SRC_MR:
        return np.repeat(s.mr[:nn, None], npes, axis=1).astype(np.int64), None
    agu = int(a[base + 1])
    cur = int(s.cur[agu])
    vmode = int(a[base + 2])
    width = npes if vmode else 1
    if cur + width > sram_bytes:
        err(c, s.pc, f"SRAM read out of range at {cur}")
    if vmode:
        vals = sram[c, :nn, cur : cur + npes].astype(np.int64)
    else:
        vals = np.repeat(sram[c, :nn, cur : cur + 1].astype(np.int64), npes, axis=1)
    if signed:
        vals = np.where(vals >= 128, vals - 256, vals)
    inc = int(a[base + 3])
    return vals, (agu if inc else None)


def _read_u32(sram, c, nn, cur, npes):
    raw = sram[c, :nn, cur : cur + 4 * npes].reshape(nn, npes, 4).astype(np.int64)
    v = raw[:, :, 0] | (raw[:, :, 1] << 8) | (raw[:, :, 2] << 16) | (raw[:, :, 3] << 24)
    return np.where(v >= 2**31, v - 2**32, v)


def _exec_lane_op(s, c, op, a, sram, acc, regs, counters, cycle, sram_bytes, err):
    nn, npes = s.nn, s.npes
    if op == OP_MAC:
        av, ainc = _fetch_mac_src(s, c, a, 1, sram, False, sram_bytes, err)
        bv, binc = _fetch_mac_src(s, c, a, 6, sram, True, sram_bytes, err)
        acc64 = acc[c, :nn, :npes].astype(np.int64) + av * bv
        if acc64.min() < _I32_MIN or acc64.max() > _I32_MAX:
            counters[CNT_OVF] = 1
        acc[c, :nn, :npes] = _wrap32(acc64)
        counters[CNT_MACS] += nn * npes
        for idx in (ainc, binc):
            if idx is not None:
                s.agu_advance(idx)
        return
    if op == OP_LDACC:
        if a[1] == isa.SRC_IMM:
            acc[c, :nn, :npes] = _wrap32(int(a[4]))
        else:
            agu = int(a[2])
            cur = int(s.cur[agu])
            if cur + 4 * npes > sram_bytes:
                err(c, s.pc, f"SRAM read out of range at {cur}")
            acc[c, :nn, :npes] = _read_u32(sram, c, nn, cur, npes)
            if a[3]:
                s.agu_advance(agu)
        return
    if op == OP_RQS:
        agu, inc, m0, shift, zp, lo, hi = (int(x) for x in a[1:8])
        cur = int(s.cur[agu])
        if cur + npes > sram_bytes:
            err(c, s.pc, f"SRAM write out of range at {cur}")
        y = _rescale(acc[c, :nn, :npes].astype(np.int64), m0, shift) + zp
        sram[c, :nn, cur : cur + npes] = np.clip(y, lo, hi).astype(np.uint8)
        if inc:
            s.agu_advance(agu)
        return
    if op == OP_ALU:
        aluop, dst, kind, sreg, sagu, sinc, swidth, imm = (int(x) for x in a[1:9])
        if kind == isa.ASRC_IMM:
            src = np.full((nn, npes), imm, dtype=np.int64)
        elif kind == isa.ASRC_REG:
            src = (acc[c, :nn, :npes] if sreg == isa.ACC_REG
                   else regs[c, :nn, :npes, sreg]).astype(np.int64)
        else:
            cur = int(s.cur[sagu])
            w = 4 if swidth else 1
            if cur + w * npes > sram_bytes:
                err(c, s.pc, f"SRAM read out of range at {cur}")
            if swidth:
                src = _read_u32(sram, c, nn, cur, npes)
            else:
                src = sram[c, :nn, cur : cur + npes].astype(np.int64)
            if sinc:
                s.agu_advance(sagu)
        dv = (acc[c, :nn, :npes] if dst == isa.ACC_REG
              else regs[c, :nn, :npes, dst]).astype(np.int64)
        name = isa.ALU_OPS[aluop]
        if name == "add":
            out = dv + src
        elif name == "sub":
            out = dv - src
        elif name == "max":
            out = np.maximum(dv, src)
        elif name == "min":
            out = np.minimum(dv, src)
        elif name == "shl":
            out = dv << (src & 31)
        elif name == "shr":
            out = dv >> (src & 31)
        else:  # mov
            out = src
        out = _wrap32(out)
        if dst == isa.ACC_REG:
            acc[c, :nn, :npes] = out
        else:
            regs[c, :nn, :npes, dst] = out
        return
    if op == OP_MULQ:
        dst, m0, shift = int(a[1]), int(a[2]), int(a[3])
        tgt = acc if dst == isa.ACC_REG else regs
        if dst == isa.ACC_REG:
            acc[c, :nn, :npes] = _wrap32(_rescale(acc[c, :nn, :npes].astype(np.int64), m0, shift))
        else:
            regs[c, :nn, :npes, dst] = _wrap32(
                _rescale(regs[c, :nn, :npes, dst].astype(np.int64), m0, shift)
            )
        return
    if op == OP_ACT:
        func, dst, p1, p2 = (int(x) for x in a[1:5])
        v = (acc[c, :nn, :npes] if dst == isa.ACC_REG
             else regs[c, :nn, :npes, dst]).astype(np.int64)
        if func == 0:  # relu
            out = np.maximum(v, p1)
        elif func == 1:  # relu6
            out = np.clip(v, p1, p2)
        else:  # sigq: coarse piecewise-linear sigmoid on the byte range
            out = np.clip(128 + (v >> 1), 0, 255)
        if dst == isa.ACC_REG:
            acc[c, :nn, :npes] = _wrap32(out)
        else:
            regs[c, :nn, :npes, dst] = _wrap32(out)
        return
    if op in (OP_LD8, OP_LD32):
        dst, agu, inc = int(a[1]), int(a[2]), int(a[3])
        cur = int(s.cur[agu])
        w = 4 if op == OP_LD32 else 1
        if cur + w * npes > sram_bytes:
            err(c, s.pc, f"SRAM read out of range at {cur}")
        if op == OP_LD32:
            regs[c, :nn, :npes, dst] = _read_u32(sram, c, nn, cur, npes)
        else:
            regs[c, :nn, :npes, dst] = sram[c, :nn, cur : cur + npes]
        if inc:
            s.agu_advance(agu)
        return
    if op in (OP_ST8, OP_ST32):
        agu, inc, src = int(a[1]), int(a[2]), int(a[3])
        cur = int(s.cur[agu])
        w = 4 if op == OP_ST32 else 1
        if cur + w * npes > sram_bytes:
            err(c, s.pc, f"SRAM write out of range at {cur}")
        v = acc[c, :nn, :npes] if src == isa.ACC_REG else regs[c, :nn, :npes, src]
        if op == OP_ST8:
            sram[c, :nn, cur : cur + npes] = (v & 0xFF).astype(np.uint8)
        else:
            v64 = v.astype(np.int64) & 0xFFFFFFFF
            raw = np.stack(
                [(v64 >> k) & 0xFF for k in (0, 8, 16, 24)], axis=-1
            ).astype(np.uint8)
            sram[c, :nn, cur : cur + 4 * npes] = raw.reshape(nn, 4 * npes)
        if inc:
            s.agu_advance(agu)
        return
    if op == OP_MCAST:
        src_ncb, agu, inc = int(a[1]), int(a[2]), int(a[3])
        cur = int(s.cur[agu])
        if cur >= sram_bytes:
            err(c, s.pc, f"SRAM read out of range at {cur}")
        s.mr_pend = np.full(s.mr.shape, int(sram[c, src_ncb, cur]), dtype=np.int64)
        s.mr_pend_cycle = cycle + 1
        if inc:
            s.agu_advance(agu)
        return
    raise SimError(f"cluster {c} pc {s.pc}: unhandled opcode {op}")


def _do_dmpa(l2, sram, c, did, desc_meta, desc_cols, desc_dims):
    """Functional data movement (timing is tracked by the caller)."""
    direction = int(desc_meta[did, 0])
    sram_base = int(desc_meta[did, 1])
    ncols = int(desc_meta[did, 2])
    fill = int(desc_meta[did, 4])
    dims = desc_dims[did]
    c0, l20, s0 = (int(x) for x in dims[0])
    idx = np.arange(c0, dtype=np.int64)
    l2_idx0 = idx * l20
    s_idx0 = idx * s0
    for j in range(ncols):
        base_l2 = int(desc_cols[did, j])
        for i3 in range(int(dims[3, 0])):
            for i2 in range(int(dims[2, 0])):
                for i1 in range(int(dims[1, 0])):
                    off_l2 = base_l2 + i3 * int(dims[3, 1]) + i2 * int(dims[2, 1]) + i1 * int(dims[1, 1])
                    off_s = sram_base + i3 * int(dims[3, 2]) + i2 * int(dims[2, 2]) + i1 * int(dims[1, 2])
                    if direction == isa.DIR_L2S:
                        sram[c, j, off_s + s_idx0] = l2[off_l2 + l2_idx0]
                    elif direction == isa.DIR_S2L:
                        l2[off_l2 + l2_idx0] = sram[c, j, off_s + s_idx0]
                    else:
                        l2[off_l2 + l2_idx0] = fill
