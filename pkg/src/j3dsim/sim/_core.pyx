# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulator core.

Bit-identical port of core_py.run_clusters; the test suite cross-checks
the two on every fixture. The lane grid is iterated in C instead of
numpy, which is what makes this core fast on long interpreted streams.
"""

import numpy as np

cimport numpy as cnp

from j3dsim import isa
from j3dsim.sim.core_py import SimError

cnp.import_array()

cdef long long I32_MIN = -(2 ** 31)
cdef long long I32_MAX = 2 ** 31 - 1

cdef int OP_HALT = isa.OPCODE["HALT"]
cdef int OP_NOP = isa.OPCODE["NOP"]
cdef int OP_BAR = isa.OPCODE["BAR"]
cdef int OP_SYNC = isa.OPCODE["SYNC"]
cdef int OP_MARK = isa.OPCODE["MARK"]
cdef int OP_CSRW = isa.OPCODE["CSRW"]
cdef int OP_CSRR = isa.OPCODE["CSRR"]
cdef int OP_LMASK = isa.OPCODE["LMASK"]
cdef int OP_AGU = isa.OPCODE["AGU"]
cdef int OP_LOOP = isa.OPCODE["LOOP"]
cdef int OP_ENDL = isa.OPCODE["ENDL"]
cdef int OP_MAC = isa.OPCODE["MAC"]
cdef int OP_LDACC = isa.OPCODE["LDACC"]
cdef int OP_RQS = isa.OPCODE["RQS"]
cdef int OP_ALU = isa.OPCODE["ALU"]
cdef int OP_MULQ = isa.OPCODE["MULQ"]
cdef int OP_ACT = isa.OPCODE["ACT"]
cdef int OP_LD8 = isa.OPCODE["LD8"]
cdef int OP_LD32 = isa.OPCODE["LD32"]
cdef int OP_ST8 = isa.OPCODE["ST8"]
cdef int OP_ST32 = isa.OPCODE["ST32"]
cdef int OP_MCAST = isa.OPCODE["MCAST"]
cdef int OP_DMPA = isa.OPCODE["DMPA"]

cdef int SRC_SRAM = isa.SRC_SRAM
cdef int SRC_MR = isa.SRC_MR
cdef int SRC_IMM = isa.SRC_IMM
cdef int ASRC_REG = isa.ASRC_REG
cdef int ASRC_IMM = isa.ASRC_IMM
cdef int ASRC_SRAM = isa.ASRC_SRAM
cdef int ACC_REG = isa.ACC_REG
cdef int SYNC_DMPA = isa.SYNC_DMPA
cdef int SYNC_DMA = isa.SYNC_DMA
cdef int DIR_L2S = isa.DIR_L2S
cdef int DIR_S2L = isa.DIR_S2L
cdef int DIR_FILL = isa.DIR_FILL

# counters layout shared with core_py
cdef int CNT_MACS = 0
cdef int CNT_BANK = 1
cdef int CNT_DMPA_WAIT = 2
cdef int CNT_DMA_WAIT = 3
cdef int CNT_SYNC = 4
cdef int CNT_OVF = 5
cdef int CNT_DMPA_BUSY = 6

# ALU opcode indices (isa.ALU_OPS order)
cdef int ALU_ADD = 0
cdef int ALU_SUB = 1
cdef int ALU_MAX = 2
cdef int ALU_MIN = 3
cdef int ALU_SHL = 4
cdef int ALU_SHR = 5
cdef int ALU_MOV = 6


cdef inline long long wrap32(long long x):
    return ((x + 2147483648LL) & 0xFFFFFFFFLL) - 2147483648LL


cdef inline long long rescale1(long long v, long long m0, long long shift):
    cdef long long prod = v * m0
    cdef long long k = 30 + shift
    cdef long long half
    if k <= 0:
        return prod << (-k)
    half = (<long long> 1) << (k - 1)
    if prod >= 0:
        return (prod + half) >> k
    return -(((-prod) + half) >> k)


cdef inline void agu_advance(long long[:, :, ::1] agu, long long[:, :, ::1] ctr,
                             long long[:, ::1] cur, int c, int idx):
    cdef int k
    for k in range(4):
        ctr[c, idx, k] += 1
        if ctr[c, idx, k] < agu[c, idx, 2 + 2 * k]:
            break
        ctr[c, idx, k] = 0
    cur[c, idx] = (agu[c, idx, 0]
                   + ctr[c, idx, 0] * agu[c, idx, 1]
                   + ctr[c, idx, 1] * agu[c, idx, 3]
                   + ctr[c, idx, 2] * agu[c, idx, 5]
                   + ctr[c, idx, 3] * agu[c, idx, 7])


cdef inline long long read_u32(cnp.uint8_t[:, :, ::1] sram, int c, int n,
                               long long cur):
    cdef long long v = (<long long> sram[c, n, cur]
                        | (<long long> sram[c, n, cur + 1] << 8)
                        | (<long long> sram[c, n, cur + 2] << 16)
                        | (<long long> sram[c, n, cur + 3] << 24))
    if v >= 2147483648LL:
        v -= 4294967296LL
    return v


cdef inline void write_u32(cnp.uint8_t[:, :, ::1] sram, int c, int n,
                           long long cur, long long v):
    cdef unsigned long long u = <unsigned long long> (v & 0xFFFFFFFFLL)
    sram[c, n, cur] = <cnp.uint8_t> (u & 0xFF)
    sram[c, n, cur + 1] = <cnp.uint8_t> ((u >> 8) & 0xFF)
    sram[c, n, cur + 2] = <cnp.uint8_t> ((u >> 16) & 0xFF)
    sram[c, n, cur + 3] = <cnp.uint8_t> ((u >> 24) & 0xFF)


cdef void do_dmpa(cnp.uint8_t[::1] l2, cnp.uint8_t[:, :, ::1] sram, int c,
                  int did, long long[:, ::1] desc_meta,
                  long long[:, ::1] desc_cols, long long[:, :, ::1] desc_dims):
    cdef int direction = <int> desc_meta[did, 0]
    cdef long long sram_base = desc_meta[did, 1]
    cdef int ncols = <int> desc_meta[did, 2]
    cdef cnp.uint8_t fill = <cnp.uint8_t> desc_meta[did, 4]
    cdef long long c0 = desc_dims[did, 0, 0]
    cdef long long l20 = desc_dims[did, 0, 1]
    cdef long long s0 = desc_dims[did, 0, 2]
    cdef long long n3 = desc_dims[did, 3, 0], n2 = desc_dims[did, 2, 0]
    cdef long long n1 = desc_dims[did, 1, 0]
    cdef long long base_l2, off_l2, off_s
    cdef long long i1, i2, i3, t
    cdef int j
    for j in range(ncols):
        base_l2 = desc_cols[did, j]
        for i3 in range(n3):
            for i2 in range(n2):
                for i1 in range(n1):
                    off_l2 = (base_l2 + i3 * desc_dims[did, 3, 1]
                              + i2 * desc_dims[did, 2, 1] + i1 * desc_dims[did, 1, 1])
                    off_s = (sram_base + i3 * desc_dims[did, 3, 2]
                             + i2 * desc_dims[did, 2, 2] + i1 * desc_dims[did, 1, 2])
                    if direction == DIR_L2S:
                        for t in range(c0):
                            sram[c, j, off_s + t * s0] = l2[off_l2 + t * l20]
                    elif direction == DIR_S2L:
                        for t in range(c0):
                            l2[off_l2 + t * l20] = sram[c, j, off_s + t * s0]
                    else:
                        for t in range(c0):
                            l2[off_l2 + t * l20] = fill


cdef int bank_conflict(long long[:, :, ::1] code, long long[:, ::1] cur,
                       long long npes, int c, long long pc, int op,
                       long long bank_bytes, long long blo, long long bhi):
    """1 if the compute op at pc touches a bank in [blo, bhi]. Each SRAM
    operand contributes its own byte range; a MAC reading from two AGUs
    does not access the banks between them."""
    cdef long long lo, hi, w
    cdef int base, idx, hit = 0
    if op == OP_MAC:
        for base in (1, 6):
            if code[c, pc, base] == SRC_SRAM:
                lo = cur[c, <int> code[c, pc, base + 1]]
                w = npes if code[c, pc, base + 2] else 1
                hi = lo + w - 1
                if lo // bank_bytes <= bhi and hi // bank_bytes >= blo:
                    hit = 1
        return hit
    if op == OP_LDACC and code[c, pc, 1] == SRC_SRAM:
        lo = cur[c, <int> code[c, pc, 2]]
        hi = lo + 4 * npes - 1
    elif op == OP_RQS:
        lo = cur[c, <int> code[c, pc, 1]]
        hi = lo + npes - 1
    elif op == OP_ALU and code[c, pc, 3] == ASRC_SRAM:
        lo = cur[c, <int> code[c, pc, 5]]
        w = 4 if code[c, pc, 7] else 1
        hi = lo + w * npes - 1
    elif op == OP_LD8 or op == OP_ST8:
        idx = <int> code[c, pc, 2] if op == OP_LD8 else <int> code[c, pc, 1]
        lo = cur[c, idx]
        hi = lo + npes - 1
    elif op == OP_LD32 or op == OP_ST32:
        idx = <int> code[c, pc, 2] if op == OP_LD32 else <int> code[c, pc, 1]
        lo = cur[c, idx]
        hi = lo + 4 * npes - 1
    elif op == OP_MCAST:
        lo = cur[c, <int> code[c, pc, 2]]
        hi = lo
    else:
        return 0
    if lo // bank_bytes <= bhi and hi // bank_bytes >= blo:
        return 1
    return 0


def run_clusters(code_list, desc_meta_in, desc_cols_in, desc_dims_in,
                 l2_in, sram_in, acc_in, regs_in,
                 start_cycle, dma_busy_until_in, counters_in, marker_cycles_in,
                 ncb_in, pes_in, bank_bytes_in, sram_bytes_in, cycle_cap_in):
    """Execute all cluster streams from start_cycle until every cluster
    halts. Returns (end_cycle, dmpa_busy_until)."""
    cdef int ncl = len(code_list)
    cdef int maxlen = 1
    cdef int c, i
    for c in range(ncl):
        maxlen = max(maxlen, code_list[c].shape[0])
    code_np = np.zeros((ncl, maxlen, 12), dtype=np.int64)
    code_np[:, :, 0] = OP_HALT
    for c in range(ncl):
        code_np[c, : code_list[c].shape[0]] = code_list[c]

    cdef long long[:, :, ::1] code = code_np
    cdef long long[:, ::1] desc_meta = np.ascontiguousarray(desc_meta_in)
    cdef long long[:, ::1] desc_cols = np.ascontiguousarray(desc_cols_in)
    cdef long long[:, :, ::1] desc_dims = np.ascontiguousarray(desc_dims_in)
    cdef cnp.uint8_t[::1] l2 = l2_in
    cdef cnp.uint8_t[:, :, ::1] sram = sram_in
    cdef cnp.int32_t[:, :, ::1] acc = acc_in
    cdef cnp.int32_t[:, :, :, ::1] regs = regs_in
    cdef long long[::1] counters = counters_in
    cdef long long[::1] marker_cycles = marker_cycles_in

    cdef int ncb = ncb_in, pes = pes_in
    cdef long long bank_bytes = bank_bytes_in, sram_bytes = sram_bytes_in
    cdef long long cycle_cap = cycle_cap_in
    cdef long long dma_busy_until = dma_busy_until_in

    # per-cluster interpreter state
    cdef long long[::1] pc = np.zeros(ncl, dtype=np.int64)
    cdef long long[::1] status = np.zeros(ncl, dtype=np.int64)
    cdef long long[::1] nn_a = np.full(ncl, ncb, dtype=np.int64)
    cdef long long[::1] npes_a = np.full(ncl, pes, dtype=np.int64)
    cdef long long[::1] marker = np.zeros(ncl, dtype=np.int64)
    cdef long long[:, ::1] csr = np.zeros((ncl, 32), dtype=np.int64)
    agu_np = np.zeros((ncl, 4, 10), dtype=np.int64)
    agu_np[:, :, 2::2] = 1
    cdef long long[:, :, ::1] agu = agu_np
    cdef long long[:, :, ::1] ctr = np.zeros((ncl, 4, 4), dtype=np.int64)
    cdef long long[:, ::1] cur = np.zeros((ncl, 4), dtype=np.int64)
    cdef long long[:, ::1] loop_start = np.zeros((ncl, 4), dtype=np.int64)
    cdef long long[:, ::1] loop_rem = np.zeros((ncl, 4), dtype=np.int64)
    cdef long long[::1] sp = np.zeros(ncl, dtype=np.int64)
    cdef long long[:, ::1] mr = np.zeros((ncl, ncb), dtype=np.int64)
    cdef long long[::1] mr_pend = np.zeros(ncl, dtype=np.int64)
    cdef long long[::1] mr_pend_cycle = np.full(ncl, -1, dtype=np.int64)

    cdef long long cycle = start_cycle
    cdef long long dmpa_busy_until = start_cycle
    cdef int dmpa_cluster = -1
    cdef long long dmpa_bank_lo = -1, dmpa_bank_hi = -1

    cdef int op, n_alive, n_bar, did, n, p, k
    cdef long long nn, npes, a1, a2, a3, mask, min_marker, dur
    cdef long long cur0, width, av, bv, acc64, y, m0, shift, zp, lo, hi
    cdef int aluop, dst, kind, sreg, sagu, sinc, swidth, func, vmode
    cdef long long imm, src, dv, out, p1, p2
    cdef int ainc_idx, binc_idx

    while True:
        # settle: HALT and loop back-edges are zero-cost
        for c in range(ncl):
            while status[c] == 0:
                op = <int> code[c, pc[c], 0]
                if op == OP_HALT:
                    status[c] = 2
                elif op == OP_ENDL:
                    if sp[c] == 0:
                        raise SimError(
                            f"cluster {c} pc {pc[c]}: ENDL with empty loop stack")
                    loop_rem[c, sp[c] - 1] -= 1
                    if loop_rem[c, sp[c] - 1] > 0:
                        pc[c] = loop_start[c, sp[c] - 1]
                    else:
                        sp[c] -= 1
                        pc[c] += 1
                else:
                    break
        n_alive = 0
        n_bar = 0
        min_marker = 0x7FFFFFFFFFFFFFFF
        for c in range(ncl):
            if status[c] != 2:
                n_alive += 1
                if status[c] == 1:
                    n_bar += 1
                if marker[c] < min_marker:
                    min_marker = marker[c]
        if n_alive == 0:
            break
        if n_bar == n_alive:
            for c in range(ncl):
                if status[c] == 1:
                    status[c] = 0
            continue
        if cycle - start_cycle > cycle_cap:
            raise SimError(f"watchdog: exceeded cycle cap {cycle_cap}")
        marker_cycles[min_marker] += 1

        for c in range(ncl):
            if status[c] == 2:
                continue
            if status[c] == 1:
                counters[CNT_SYNC] += 1
                continue
            if mr_pend_cycle[c] >= 0 and cycle >= mr_pend_cycle[c]:
                for n in range(ncb):
                    mr[c, n] = mr_pend[c]
                mr_pend_cycle[c] = -1
            op = <int> code[c, pc[c], 0]
            nn = nn_a[c]
            npes = npes_a[c]

            # bank-conflict stall: compute access vs active DMPA transfer
            if dmpa_cluster == c and cycle < dmpa_busy_until and dmpa_bank_lo >= 0:
                if bank_conflict(code, cur, npes, c, pc[c], op,
                                 bank_bytes, dmpa_bank_lo, dmpa_bank_hi):
                    counters[CNT_BANK] += 1
                    continue

            if op == OP_NOP:
                pc[c] += 1
                continue
            if op == OP_BAR:
                status[c] = 1
                pc[c] += 1
                continue
            if op == OP_SYNC:
                mask = code[c, pc[c], 1]
                if ((mask & SYNC_DMPA and cycle < dmpa_busy_until)
                        or (mask & SYNC_DMA and cycle < dma_busy_until)):
                    counters[CNT_SYNC] += 1
                    continue
                pc[c] += 1
                continue
            if op == OP_MARK:
                marker[c] = code[c, pc[c], 1]
                csr[c, 16] = code[c, pc[c], 1]
                pc[c] += 1
                continue
            if op == OP_CSRW:
                csr[c, code[c, pc[c], 1] & 31] = code[c, pc[c], 2]
                if code[c, pc[c], 1] == 16:
                    marker[c] = code[c, pc[c], 2]
                pc[c] += 1
                continue
            if op == OP_CSRR:
                y = wrap32(csr[c, code[c, pc[c], 2] & 31])
                dst = <int> code[c, pc[c], 1]
                for n in range(nn):
                    for p in range(npes):
                        regs[c, n, p, dst] = <cnp.int32_t> y
                pc[c] += 1
                continue
            if op == OP_LMASK:
                nn_a[c] = code[c, pc[c], 1]
                npes_a[c] = code[c, pc[c], 2]
                pc[c] += 1
                continue
            if op == OP_AGU:
                k = <int> code[c, pc[c], 1]
                agu[c, k, 0] = code[c, pc[c], 2]
                for i in range(4):
                    agu[c, k, 1 + 2 * i] = code[c, pc[c], 3 + 2 * i]
                    agu[c, k, 2 + 2 * i] = code[c, pc[c], 4 + 2 * i]
                for i in range(4):
                    ctr[c, k, i] = 0
                cur[c, k] = code[c, pc[c], 2]
                pc[c] += 1
                continue
            if op == OP_LOOP:
                if sp[c] >= 4:
                    raise SimError(f"cluster {c} pc {pc[c]}: loop nesting exceeds 4")
                loop_start[c, sp[c]] = pc[c] + 1
                loop_rem[c, sp[c]] = code[c, pc[c], 1]
                sp[c] += 1
                pc[c] += 1
                continue
            if op == OP_DMPA:
                if cycle < dmpa_busy_until:
                    counters[CNT_DMPA_WAIT] += 1
                    continue
                did = <int> code[c, pc[c], 1]
                do_dmpa(l2, sram, c, did, desc_meta, desc_cols, desc_dims)
                dur = desc_meta[did, 7]
                dmpa_busy_until = cycle + dur
                counters[CNT_DMPA_BUSY] += dur
                if desc_meta[did, 0] == DIR_FILL:
                    dmpa_cluster = -1
                    dmpa_bank_lo = -1
                    dmpa_bank_hi = -1
                else:
                    dmpa_cluster = c
                    dmpa_bank_lo = desc_meta[did, 5] // bank_bytes
                    dmpa_bank_hi = desc_meta[did, 6] // bank_bytes
                pc[c] += 1
                continue

            # lane ops
            if op == OP_MAC:
                ainc_idx = -1
                binc_idx = -1
                kind = <int> code[c, pc[c], 1]
                if kind == SRC_SRAM:
                    a1 = code[c, pc[c], 2]
                    vmode = <int> code[c, pc[c], 3]
                    cur0 = cur[c, <int> a1]
                    width = npes if vmode else 1
                    if cur0 + width > sram_bytes:
                        raise SimError(
                            f"cluster {c} pc {pc[c]}: SRAM read out of range at {cur0}")
                    if code[c, pc[c], 4]:
                        ainc_idx = <int> a1
                sreg = <int> code[c, pc[c], 6]
                if sreg == SRC_SRAM:
                    a2 = code[c, pc[c], 7]
                    swidth = <int> code[c, pc[c], 8]
                    lo = cur[c, <int> a2]
                    width = npes if swidth else 1
                    if lo + width > sram_bytes:
                        raise SimError(
                            f"cluster {c} pc {pc[c]}: SRAM read out of range at {lo}")
                    if code[c, pc[c], 9]:
                        binc_idx = <int> a2
                for n in range(nn):
                    for p in range(npes):
                        if kind == SRC_IMM:
                            av = code[c, pc[c], 5]
                        elif kind == SRC_MR:
                            av = mr[c, n]
                        else:
                            cur0 = cur[c, <int> code[c, pc[c], 2]]
                            if code[c, pc[c], 3]:
                                av = sram[c, n, cur0 + p]
                            else:
                                av = sram[c, n, cur0]
                        if sreg == SRC_IMM:
                            bv = code[c, pc[c], 10]
                        elif sreg == SRC_MR:
                            bv = mr[c, n]
                        else:
                            lo = cur[c, <int> code[c, pc[c], 7]]
                            if code[c, pc[c], 8]:
                                bv = sram[c, n, lo + p]
                            else:
                                bv = sram[c, n, lo]
                            if bv >= 128:
                                bv -= 256
                        acc64 = <long long> acc[c, n, p] + av * bv
                        if acc64 < I32_MIN or acc64 > I32_MAX:
                            counters[CNT_OVF] = 1
                        acc[c, n, p] = <cnp.int32_t> wrap32(acc64)
                counters[CNT_MACS] += nn * npes
                if ainc_idx >= 0:
                    agu_advance(agu, ctr, cur, c, ainc_idx)
                if binc_idx >= 0:
                    agu_advance(agu, ctr, cur, c, binc_idx)
                pc[c] += 1
                continue
            if op == OP_LDACC:
                if code[c, pc[c], 1] == SRC_IMM:
                    y = wrap32(code[c, pc[c], 4])
                    for n in range(nn):
                        for p in range(npes):
                            acc[c, n, p] = <cnp.int32_t> y
                else:
                    k = <int> code[c, pc[c], 2]
                    cur0 = cur[c, k]
                    if cur0 + 4 * npes > sram_bytes:
                        raise SimError(
                            f"cluster {c} pc {pc[c]}: SRAM read out of range at {cur0}")
                    for n in range(nn):
                        for p in range(npes):
                            acc[c, n, p] = <cnp.int32_t> read_u32(sram, c, n, cur0 + 4 * p)
                    if code[c, pc[c], 3]:
                        agu_advance(agu, ctr, cur, c, k)
                pc[c] += 1
                continue
            if op == OP_RQS:
                k = <int> code[c, pc[c], 1]
                m0 = code[c, pc[c], 3]
                shift = code[c, pc[c], 4]
                zp = code[c, pc[c], 5]
                lo = code[c, pc[c], 6]
                hi = code[c, pc[c], 7]
                cur0 = cur[c, k]
                if cur0 + npes > sram_bytes:
                    raise SimError(
                        f"cluster {c} pc {pc[c]}: SRAM write out of range at {cur0}")
                for n in range(nn):
                    for p in range(npes):
                        y = rescale1(acc[c, n, p], m0, shift) + zp
                        if y < lo:
                            y = lo
                        elif y > hi:
                            y = hi
                        sram[c, n, cur0 + p] = <cnp.uint8_t> (y & 0xFF)
                if code[c, pc[c], 2]:
                    agu_advance(agu, ctr, cur, c, k)
                pc[c] += 1
                continue
            if op == OP_ALU:
                aluop = <int> code[c, pc[c], 1]
                dst = <int> code[c, pc[c], 2]
                kind = <int> code[c, pc[c], 3]
                sreg = <int> code[c, pc[c], 4]
                sagu = <int> code[c, pc[c], 5]
                sinc = <int> code[c, pc[c], 6]
                swidth = <int> code[c, pc[c], 7]
                imm = code[c, pc[c], 8]
                cur0 = 0
                if kind == ASRC_SRAM:
                    cur0 = cur[c, sagu]
                    width = 4 if swidth else 1
                    if cur0 + width * npes > sram_bytes:
                        raise SimError(
                            f"cluster {c} pc {pc[c]}: SRAM read out of range at {cur0}")
                for n in range(nn):
                    for p in range(npes):
                        if kind == ASRC_IMM:
                            src = imm
                        elif kind == ASRC_REG:
                            src = acc[c, n, p] if sreg == ACC_REG else regs[c, n, p, sreg]
                        else:
                            if swidth:
                                src = read_u32(sram, c, n, cur0 + 4 * p)
                            else:
                                src = sram[c, n, cur0 + p]
                        dv = acc[c, n, p] if dst == ACC_REG else regs[c, n, p, dst]
                        if aluop == ALU_ADD:
                            out = dv + src
                        elif aluop == ALU_SUB:
                            out = dv - src
                        elif aluop == ALU_MAX:
                            out = dv if dv >= src else src
                        elif aluop == ALU_MIN:
                            out = dv if dv <= src else src
                        elif aluop == ALU_SHL:
                            out = dv << (src & 31)
                        elif aluop == ALU_SHR:
                            out = dv >> (src & 31)
                        else:
                            out = src
                        out = wrap32(out)
                        if dst == ACC_REG:
                            acc[c, n, p] = <cnp.int32_t> out
                        else:
                            regs[c, n, p, dst] = <cnp.int32_t> out
                if kind == ASRC_SRAM and sinc:
                    agu_advance(agu, ctr, cur, c, sagu)
                pc[c] += 1
                continue
            if op == OP_MULQ:
                dst = <int> code[c, pc[c], 1]
                m0 = code[c, pc[c], 2]
                shift = code[c, pc[c], 3]
                for n in range(nn):
                    for p in range(npes):
                        if dst == ACC_REG:
                            acc[c, n, p] = <cnp.int32_t> wrap32(
                                rescale1(acc[c, n, p], m0, shift))
                        else:
                            regs[c, n, p, dst] = <cnp.int32_t> wrap32(
                                rescale1(regs[c, n, p, dst], m0, shift))
                pc[c] += 1
                continue
            if op == OP_ACT:
                func = <int> code[c, pc[c], 1]
                dst = <int> code[c, pc[c], 2]
                p1 = code[c, pc[c], 3]
                p2 = code[c, pc[c], 4]
                for n in range(nn):
                    for p in range(npes):
                        dv = acc[c, n, p] if dst == ACC_REG else regs[c, n, p, dst]
                        if func == 0:  # relu
                            out = dv if dv >= p1 else p1
                        elif func == 1:  # relu6
                            out = p1 if dv < p1 else (p2 if dv > p2 else dv)
                        else:  # sigq
                            out = 128 + (dv >> 1)
                            if out < 0:
                                out = 0
                            elif out > 255:
                                out = 255
                        out = wrap32(out)
                        if dst == ACC_REG:
                            acc[c, n, p] = <cnp.int32_t> out
                        else:
                            regs[c, n, p, dst] = <cnp.int32_t> out
                pc[c] += 1
                continue
            if op == OP_LD8 or op == OP_LD32:
                dst = <int> code[c, pc[c], 1]
                k = <int> code[c, pc[c], 2]
                cur0 = cur[c, k]
                width = 4 if op == OP_LD32 else 1
                if cur0 + width * npes > sram_bytes:
                    raise SimError(
                        f"cluster {c} pc {pc[c]}: SRAM read out of range at {cur0}")
                for n in range(nn):
                    for p in range(npes):
                        if op == OP_LD32:
                            regs[c, n, p, dst] = <cnp.int32_t> read_u32(sram, c, n, cur0 + 4 * p)
                        else:
                            regs[c, n, p, dst] = sram[c, n, cur0 + p]
                if code[c, pc[c], 3]:
                    agu_advance(agu, ctr, cur, c, k)
                pc[c] += 1
                continue
            if op == OP_ST8 or op == OP_ST32:
                k = <int> code[c, pc[c], 1]
                sreg = <int> code[c, pc[c], 3]
                cur0 = cur[c, k]
                width = 4 if op == OP_ST32 else 1
                if cur0 + width * npes > sram_bytes:
                    raise SimError(
                        f"cluster {c} pc {pc[c]}: SRAM write out of range at {cur0}")
                for n in range(nn):
                    for p in range(npes):
                        dv = acc[c, n, p] if sreg == ACC_REG else regs[c, n, p, sreg]
                        if op == OP_ST8:
                            sram[c, n, cur0 + p] = <cnp.uint8_t> (dv & 0xFF)
                        else:
                            write_u32(sram, c, n, cur0 + 4 * p, dv)
                if code[c, pc[c], 2]:
                    agu_advance(agu, ctr, cur, c, k)
                pc[c] += 1
                continue
            if op == OP_MCAST:
                n = <int> code[c, pc[c], 1]
                k = <int> code[c, pc[c], 2]
                cur0 = cur[c, k]
                if cur0 >= sram_bytes:
                    raise SimError(
                        f"cluster {c} pc {pc[c]}: SRAM read out of range at {cur0}")
                mr_pend[c] = sram[c, n, cur0]
                mr_pend_cycle[c] = cycle + 1
                if code[c, pc[c], 3]:
                    agu_advance(agu, ctr, cur, c, k)
                pc[c] += 1
                continue
            raise SimError(f"cluster {c} pc {pc[c]}: unhandled opcode {op}")
        cycle += 1
    return int(cycle), int(dmpa_busy_until)
