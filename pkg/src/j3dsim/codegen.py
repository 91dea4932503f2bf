"""Backend lowering: turn a mapped, quantized graph into an executable
Program plus the initial L2 weight image.

Every layer follows the same skeleton per cluster: transfer descriptors
are issued, SYNC waits for the engine, compute runs out of NCB SRAM, and
store descriptors drain the outputs. Parameter transfers are the only
ones issued while compute runs (next-layer prefetch and the intra-layer
weight ping-pong between the two top SRAM banks), and they target banks
compute never touches, so the generated code runs with zero
bank-conflict stalls.

The emitter re-derives every transfer from the tile list and asserts
that the bytes it moves per layer equal the mapping plan's accounting
exactly; a mismatch is a bug, not a tuning issue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from j3dsim import isa, layout
from j3dsim.config import HardwareConfig
from j3dsim.ir import GraphIR
from j3dsim.layout import (
    ExecLayer,
    L2Tensor,
    MapError,
    cdiv,
    ceil8,
    conv_attrs,
    macs_per_out,
    split_range,
)
from j3dsim.mapper import LayerPlan, MappingPlan, weight_chunks
from j3dsim.quantize import encode_scale

_ALU = {name: i for i, name in enumerate(isa.ALU_OPS)}


def _alu_imm(op: str, dst: int, imm: int) -> isa.Instr:
    return isa.Instr("ALU", (_ALU[op], dst, isa.ASRC_IMM, 0, 0, 0, 0, imm))


def _alu_reg(op: str, dst: int, src: int) -> isa.Instr:
    return isa.Instr("ALU", (_ALU[op], dst, isa.ASRC_REG, src, 0, 0, 0, 0))


def _alu_sram(op: str, dst: int, agu: int, inc: bool, i32: bool = False) -> isa.Instr:
    return isa.Instr("ALU", (_ALU[op], dst, isa.ASRC_SRAM, 0, agu,
                             1 if inc else 0, 1 if i32 else 0, 0))


def _ldacc_sram(agu: int, inc: bool) -> isa.Instr:
    return isa.Instr("LDACC", (isa.SRC_SRAM, agu, 1 if inc else 0, 0))


def _ldacc_imm(v: int) -> isa.Instr:
    return isa.Instr("LDACC", (isa.SRC_IMM, 0, 0, int(v)))


def _rqs(agu: int, inc: bool, m0: int, shift: int, zp: int, lo: int, hi: int) -> isa.Instr:
    return isa.Instr("RQS", (agu, 1 if inc else 0, m0, shift, zp, lo, hi))


# ------------------------------------------------------- quant parameters

def _quant(g: GraphIR, name: str):
    q = g.tensors[name].quant
    if q is None:
        raise MapError(f"tensor {name!r}: missing quant params")
    return q


def _requant_clamp(g: GraphIR, el: ExecLayer) -> tuple[int, int, int, int, int]:
    """(m0, shift, zp, lo, hi) for a conv-like layer's RQS, with any fused
    activation folded into the clamp."""
    q = _quant(g, el.layer.outputs[0])
    if q.requant is None:
        raise MapError(f"layer {el.id!r}: output tensor missing requant params")
    lo, hi = 0, 255
    if el.act is not None:
        aq = _quant(g, el.act.outputs[0])
        lo = aq.zero_point
        if el.act.kind == "ReLU6":
            hi = min(255, aq.zero_point + int(round(6.0 / aq.scale)))
    return q.requant["m0"], q.requant["shift"], q.zero_point, lo, hi


def _add_clamp(g: GraphIR, el: ExecLayer) -> tuple[int, int]:
    q = _quant(g, el.layer.outputs[0])
    lo, hi = 0, 255
    if el.act is not None:
        aq = _quant(g, el.act.outputs[0])
        lo = aq.zero_point
        if el.act.kind == "ReLU6":
            hi = min(255, aq.zero_point + int(round(6.0 / aq.scale)))
    return max(lo, 0), min(hi, 255)


# ----------------------------------------------------------- weight blobs

def build_weight_blob(g: GraphIR, steps: list[ExecLayer], plan: MappingPlan,
                      cfg: HardwareConfig) -> np.ndarray:
    """Assemble the L2 weights region: per layer, int8 weights transformed
    into the template's SRAM layout, then int32 biases with the input
    zero-point folded in (bias' = b - zp_in * sum(w))."""
    _, size = plan.regions["weights"]
    blob = np.zeros(size, dtype=np.uint8)
    pes = cfg.pes_per_ncb
    for el in steps:
        if el.kind not in layout.CONV_KINDS:
            continue
        lp = plan.layer(el.id)
        base, bsz = lp.w_l2
        kh, kw, _, _, _, _, cin, cout, _, _ = conv_attrs(g, el)
        dw = el.kind == "DepthwiseConv2D"
        wq = g.data[el.w_name].astype(np.int64)
        wflat = wq.reshape(cout, -1)  # (cout, red) in [ci][ky][kx] order
        bias = g.data[el.b_name].astype(np.int64) if el.b_name else np.zeros(cout, np.int64)
        zp_in = _quant(g, el.in_names[0]).zero_point
        bfold = (bias - zp_in * wflat.sum(axis=1)).astype(np.int64)
        if bfold.min() < -(2**31) or bfold.max() >= 2**31:
            raise MapError(f"layer {el.id!r}: folded bias exceeds int32")
        for entry in weight_chunks(g, el, lp.tp, cfg):
            c0, cs = entry["c0"], entry["csize"]
            if lp.tp.template == "spatial":
                red = kh * kw if dw else cin * kh * kw
                ncog = ceil8(cs) // pes
                arr = np.zeros((ncog, red, pes), dtype=np.int8)
                for cog in range(ncog):
                    for p in range(pes):
                        co = c0 + cog * pes + p
                        if co < c0 + cs:
                            arr[cog, :, p] = wflat[co]
                off = base + entry["w_off"]
                blob[off:off + arr.size] = arr.reshape(-1).view(np.uint8)
                barr = np.zeros((ncog, pes), dtype=np.int32)
                for cog in range(ncog):
                    for p in range(pes):
                        co = c0 + cog * pes + p
                        if co < c0 + cs:
                            barr[cog, p] = bfold[co]
            else:
                nn = cs // pes
                for ch in entry["chunks"]:
                    ci0, cisz = ch["ci0"], ch["cisize"]
                    if dw:
                        red = kh * kw
                        sl = wflat[c0:c0 + cs]  # (cs, k2)
                    else:
                        red = cisz * kh * kw
                        sl = wq[c0:c0 + cs, ci0:ci0 + cisz].reshape(cs, red)
                    arr = np.zeros((nn, red, pes), dtype=np.int8)
                    for n in range(nn):
                        arr[n] = sl[n * pes:(n + 1) * pes].T
                    off = base + ch["w_off"]
                    blob[off:off + arr.size] = arr.reshape(-1).view(np.uint8)
                barr = bfold[c0:c0 + cs].astype(np.int32).reshape(nn, pes)
            boff = base + entry["b_off"]
            raw = barr.reshape(-1).view(np.uint8)
            blob[boff:boff + raw.size] = raw
    return blob


# -------------------------------------------------------------- emission

@dataclass
class _Ctx:
    g: GraphIR
    plan: MappingPlan
    cfg: HardwareConfig
    l2: dict[str, L2Tensor]
    streams: list[list[isa.Instr]]
    descs: dict[isa.Desc, int]
    moved: dict[tuple[str, str], int]  # (layer_id, category) -> bytes
    el: ExecLayer = None
    lp: LayerPlan = None
    synced: list[bool] = field(default_factory=list)
    inject: list[tuple[int, isa.Desc, str]] = field(default_factory=list)
    skip_w: bool = False

    def intern(self, d: isa.Desc) -> int:
        did = self.descs.get(d)
        if did is None:
            err = isa.check_desc(d, self.cfg)
            if err:
                raise MapError(f"layer {self.el.id!r}: bad descriptor ({err})")
            did = len(self.descs)
            self.descs[d] = did
        return did

    def emit(self, ci: int, op: str, *args) -> None:
        self.streams[ci].append(isa.Instr(op, args))

    def dmpa(self, ci: int, d: isa.Desc, cat: str, owner: str | None = None) -> None:
        did = self.intern(d)
        self.streams[ci].append(isa.Instr("DMPA", (did,)))
        key = (owner or self.el.id, cat)
        self.moved[key] = self.moved.get(key, 0) + d.total_bytes

    def sync(self, ci: int) -> None:
        self.emit(ci, "SYNC", isa.SYNC_DMPA)
        if not self.synced[ci]:
            self.synced[ci] = True
            for tci, d, owner in self.inject:
                if tci == ci:
                    self.dmpa(ci, d, "param", owner=owner)

    def agu(self, ci: int, idx: int, base: int, *dims) -> None:
        self.streams[ci].append(isa.agu_cfg(idx, base, *dims))

    def buf(self, name: str) -> int:
        return self.lp.buffers[name][0]


def _fill_descs(t: L2Tensor, zp: int) -> list[isa.Desc]:
    """Pad-margin fill descriptors for a produced tensor."""
    out = []
    c, h, w = t.shape[1], t.shape[2], t.shape[3]
    hp, wp, ph, pw = t.hp, t.wp, t.pad_h, t.pad_w
    if ph:
        dims = ((ph * wp, 1, 1), (c, hp * wp, 1))
        out.append(isa.Desc(isa.DIR_FILL, 0, (t.offset,), dims, zp))
        out.append(isa.Desc(isa.DIR_FILL, 0, (t.offset + (ph + h) * wp,), dims, zp))
    if pw:
        dims = ((pw, 1, 1), (h, wp, 1), (c, hp * wp, 1))
        out.append(isa.Desc(isa.DIR_FILL, 0, (t.offset + ph * wp,), dims, zp))
        out.append(isa.Desc(isa.DIR_FILL, 0, (t.offset + ph * wp + pw + w,), dims, zp))
    return out


def _emit_fill(ctx: _Ctx) -> None:
    t = ctx.l2[ctx.el.out_name]
    zp = _quant(ctx.g, ctx.el.out_name).zero_point
    for d in _fill_descs(t, zp):
        ctx.dmpa(0, d, "fill")


# ------------------------------------------------- weight/bias descriptors

def _spatial_w_descs(ctx: _Ctx, entry: dict) -> tuple[isa.Desc, isa.Desc]:
    ncb = ctx.cfg.ncb_per_cluster
    w0, _ = ctx.lp.w_l2
    cols_w = (w0 + entry["w_off"],) * ncb
    cols_b = (w0 + entry["b_off"],) * ncb
    dw = isa.Desc(isa.DIR_L2S, ctx.buf("w"), cols_w, ((entry["w_size"], 1, 1),))
    db = isa.Desc(isa.DIR_L2S, ctx.buf("bias"), cols_b, ((entry["b_size"], 1, 1),))
    return dw, db


def _channel_w_desc(ctx: _Ctx, entry: dict, chunk: dict, sram: int) -> isa.Desc:
    pes = ctx.cfg.pes_per_ncb
    nn = entry["csize"] // pes
    w0, _ = ctx.lp.w_l2
    slice_sz = chunk["w_size"] // nn
    cols = tuple(w0 + chunk["w_off"] + n * slice_sz for n in range(nn))
    return isa.Desc(isa.DIR_L2S, sram, cols, ((slice_sz, 1, 1),))


def _channel_b_desc(ctx: _Ctx, entry: dict) -> isa.Desc:
    pes = ctx.cfg.pes_per_ncb
    nn = entry["csize"] // pes
    w0, _ = ctx.lp.w_l2
    cols = tuple(w0 + entry["b_off"] + n * 4 * pes for n in range(nn))
    return isa.Desc(isa.DIR_L2S, ctx.buf("bias"), cols, ((4 * pes, 1, 1),))


def prefetch_desc(g: GraphIR, plan: MappingPlan, cfg: HardwareConfig,
                  el: ExecLayer, lp: LayerPlan,
                  l2: dict[str, L2Tensor]) -> isa.Desc:
    """The single weight descriptor of a prefetchable layer."""
    ctx = _Ctx(g, plan, cfg, l2, [], {}, {}, el=el, lp=lp)
    entry = weight_chunks(g, el, lp.tp, cfg)[0]
    if lp.tp.template == "spatial":
        return _spatial_w_descs(ctx, entry)[0]
    return _channel_w_desc(ctx, entry, entry["chunks"][0], lp.buffers["w"][0])


# ------------------------------------------------------- spatial template

def _emit_spatial(ctx: _Ctx) -> None:
    g, el, lp, cfg = ctx.g, ctx.el, ctx.lp, ctx.cfg
    kh, kw, sh, sw, _, _, cin, cout, oh, ow = conv_attrs(g, el)
    lph, lpw = (int(x) for x in el.layer.attrs.get("padding", [0, 0]))
    dw = el.kind == "DepthwiseConv2D"
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    t_in = ctx.l2[el.in_names[0]]
    t_out = ctx.l2[el.out_name]
    pb = kh * kw if dw else cin * kh * kw
    m0, shift, zp, lo, hi = _requant_clamp(g, el)
    entries = {e["c0"]: e for e in weight_chunks(g, el, lp.tp, cfg)}
    in0, wb, bb, ob = (ctx.buf(n) for n in ("in0", "w", "bias", "out"))

    def px_yx(px: int) -> tuple[int, int]:
        return divmod(px, ow)

    for tile in layout.spatial_tiles(g, el, lp.tp, cfg):
        ci = tile.cluster
        c0, cs = tile.cseg
        ct8 = ceil8(cs)
        ncog = ct8 // pes
        ngr = cdiv(tile.npx, ncb)
        gfull = tile.npx // ncb
        rem_px = tile.npx % ncb
        gpatch = ct8 * kh * kw if dw else pb  # in0 bytes per group

        if tile.load_w:
            d_w, d_b = _spatial_w_descs(ctx, entries[c0])
            if not ctx.skip_w:
                ctx.dmpa(ci, d_w, "param")
            ctx.dmpa(ci, d_b, "param")
        if tile.load_in:
            for gi in range(ngr):
                npx_g = ncb if gi < gfull else rem_px
                cols = []
                for j in range(npx_g):
                    oy, ox = px_yx(tile.px0 + gi * ncb + j)
                    cols.append(t_in.addr(c0 if dw else 0,
                                          oy * sh - lph, ox * sw - lpw))
                if dw:
                    dims = ((pes, t_in.hp * t_in.wp, 1), (kw, 1, pes),
                            (kh, t_in.wp, pes * kw),
                            (ct8 // pes, pes * t_in.hp * t_in.wp, pes * kh * kw))
                else:
                    dims = ((kw, 1, 1), (kh, t_in.wp, kw),
                            (cin, t_in.hp * t_in.wp, kh * kw))
                ctx.dmpa(ci, isa.Desc(isa.DIR_L2S, in0 + gi * gpatch,
                                      tuple(cols), dims), "in")
        ctx.sync(ci)

        if dw:
            ctx.agu(ci, 0, in0, (pes, kh * kw), (gpatch, ngr), (pes * kh * kw, ncog))
        else:
            ctx.agu(ci, 0, in0, (1, pb), (pb, ngr), (0, ncog))
        ctx.agu(ci, 1, wb, (pes, pb), (0, ngr), (pb * pes, ncog))
        ctx.agu(ci, 2, bb, (0, ngr), (4 * pes, ncog))
        ctx.agu(ci, 3, ob, (pes, ngr), (ngr * pes, ncog))

        a_src = ("sram", 0, "v" if dw else "b", True)
        for cog in range(ncog):
            lanes = min(pes, cs - cog * pes)
            ctx.emit(ci, "LMASK", ncb, lanes)
            if gfull:
                ctx.emit(ci, "LOOP", gfull)
                ctx.streams[ci].append(_ldacc_sram(2, True))
                ctx.emit(ci, "LOOP", pb)
                ctx.streams[ci].append(isa.mac(a_src, ("sram", 1, "v", True)))
                ctx.emit(ci, "ENDL")
                ctx.streams[ci].append(_rqs(3, True, m0, shift, zp, lo, hi))
                ctx.emit(ci, "ENDL")
            if rem_px:
                ctx.emit(ci, "LMASK", rem_px, lanes)
                ctx.streams[ci].append(_ldacc_sram(2, True))
                ctx.emit(ci, "LOOP", pb)
                ctx.streams[ci].append(isa.mac(a_src, ("sram", 1, "v", True)))
                ctx.emit(ci, "ENDL")
                ctx.streams[ci].append(_rqs(3, True, m0, shift, zp, lo, hi))

        ncog_full = cs // pes
        rem_ch = cs % pes
        hw_out = t_out.hp * t_out.wp
        for gi in range(ngr):
            npx_g = ncb if gi < gfull else rem_px
            cols = []
            for j in range(npx_g):
                oy, ox = px_yx(tile.px0 + gi * ncb + j)
                cols.append(t_out.addr(c0, oy, ox))
            if ncog_full:
                dims = ((pes, hw_out, 1), (ncog_full, pes * hw_out, ngr * pes))
                ctx.dmpa(ci, isa.Desc(isa.DIR_S2L, ob + gi * pes,
                                      tuple(cols), dims), "out")
            if rem_ch:
                cols2 = []
                for j in range(npx_g):
                    oy, ox = px_yx(tile.px0 + gi * ncb + j)
                    cols2.append(t_out.addr(c0 + ncog_full * pes, oy, ox))
                sbase = ob + ncog_full * ngr * pes + gi * pes
                ctx.dmpa(ci, isa.Desc(isa.DIR_S2L, sbase, tuple(cols2),
                                      ((rem_ch, hw_out, 1),)), "out")


# ------------------------------------------------------- channel template

def _emit_channel(ctx: _Ctx) -> None:
    if ctx.el.kind in ("Dense", "GlobalAvgPool"):
        _emit_channel_flat(ctx)
    else:
        _emit_channel_rows(ctx)


def _emit_channel_flat(ctx: _Ctx) -> None:
    g, el, lp, cfg = ctx.g, ctx.el, ctx.lp, ctx.cfg
    pes, ncb = cfg.pes_per_ncb, cfg.ncb_per_cluster
    t_in = ctx.l2[el.in_names[0]]
    t_out = ctx.l2[el.out_name]
    cin = t_in.shape[1]
    dense = el.kind == "Dense"
    hw = t_in.shape[2] * t_in.shape[3]
    in0 = ctx.buf("in0")
    ob = ctx.buf("out")
    if dense:
        entries = {e["c0"]: e for e in weight_chunks(g, el, lp.tp, cfg)}
        m0, shift, zp, lo, hi = _requant_clamp(g, el)
    else:
        q_in = _quant(g, el.in_names[0])
        q_out = _quant(g, el.out_name)
        m0, shift = encode_scale(q_in.scale / (hw * q_out.scale))
        zp, lo, hi = q_out.zero_point, 0, 255

    load_seq: dict[int, int] = {}  # per-cluster ping-pong counter
    for tile in layout.channel_tiles(g, el, lp.tp, cfg):
        ci = tile.cluster
        b0, bs = tile.block
        nn = bs // pes
        if dense:
            entry = entries[b0]
            chunks = entry["chunks"]
            n_ch = len(chunks)
            # input replicated per NCB
            dims = ((1, 1, 1), (cin, t_in.hp * t_in.wp, 1))
            ctx.dmpa(ci, isa.Desc(isa.DIR_L2S, in0,
                                  (t_in.addr(0, 0, 0),) * nn, dims), "in")
            ctx.dmpa(ci, _channel_b_desc(ctx, entry), "param")
            banks = [("w", "w2")[k % 2] if lp.uses_both_banks else "w"
                     for k in range(load_seq.get(ci, 0), load_seq.get(ci, 0) + n_ch)]
            load_seq[ci] = load_seq.get(ci, 0) + n_ch
            if not ctx.skip_w:
                ctx.dmpa(ci, _channel_w_desc(ctx, entry, chunks[0],
                                             ctx.buf(banks[0])), "param")
            ctx.emit(ci, "LMASK", nn, pes)
            ctx.agu(ci, 0, in0, (1, cin))
            ctx.agu(ci, 2, ctx.buf("bias"))
            ctx.agu(ci, 3, ctx.buf("psum") if n_ch > 1 else ob)
            for k, ch in enumerate(chunks):
                ctx.sync(ci)
                if k + 1 < n_ch and not ctx.skip_w:
                    ctx.dmpa(ci, _channel_w_desc(ctx, entry, chunks[k + 1],
                                                 ctx.buf(banks[k + 1])), "param")
                if k == 1:
                    ctx.agu(ci, 2, ctx.buf("psum"))
                if n_ch > 1 and k == n_ch - 1:
                    ctx.agu(ci, 3, ob)
                ctx.agu(ci, 1, ctx.buf(banks[k]), (pes, ch["cisize"]))
                ctx.streams[ci].append(_ldacc_sram(2, False))
                ctx.emit(ci, "LOOP", ch["cisize"])
                ctx.streams[ci].append(isa.mac(("sram", 0, "b", True),
                                               ("sram", 1, "v", True)))
                ctx.emit(ci, "ENDL")
                if k < n_ch - 1:
                    ctx.emit(ci, "ST32", 3, 0, isa.ACC_REG)
                else:
                    ctx.streams[ci].append(_rqs(3, False, m0, shift, zp, lo, hi))
        else:
            # GlobalAvgPool: channels distributed, one value per lane
            cols = tuple(t_in.addr(b0 + n * pes, 0, 0) for n in range(nn))
            dims = ((pes, t_in.hp * t_in.wp, 1),
                    (t_in.shape[3], 1, pes),
                    (t_in.shape[2], t_in.wp, pes * t_in.shape[3]))
            ctx.dmpa(ci, isa.Desc(isa.DIR_L2S, in0, cols, dims), "in")
            ctx.emit(ci, "LMASK", nn, pes)
            ctx.sync(ci)
            ctx.agu(ci, 0, in0, (pes, hw))
            ctx.agu(ci, 3, ob)
            zp_in = _quant(g, el.in_names[0]).zero_point
            ctx.streams[ci].append(_ldacc_imm(-hw * zp_in))
            ctx.emit(ci, "LOOP", hw)
            ctx.streams[ci].append(_alu_sram("add", isa.ACC_REG, 0, True))
            ctx.emit(ci, "ENDL")
            ctx.streams[ci].append(_rqs(3, False, m0, shift, zp, lo, hi))
        cols = tuple(t_out.addr(b0 + n * pes, 0, 0) for n in range(nn))
        ctx.dmpa(ci, isa.Desc(isa.DIR_S2L, ob, cols,
                              ((pes, t_out.hp * t_out.wp, 1),)), "out")


def _emit_channel_rows(ctx: _Ctx) -> None:
    g, el, lp, cfg = ctx.g, ctx.el, ctx.lp, ctx.cfg
    kh, kw, sh, sw, _, _, cin, cout, oh, ow = conv_attrs(g, el)
    lph, lpw = (int(x) for x in el.layer.attrs.get("padding", [0, 0]))
    pes, ncb = cfg.pes_per_ncb, cfg.ncb_per_cluster
    kind = el.kind
    conv_like = kind == "Conv2D"
    has_w = kind in ("Conv2D", "DepthwiseConv2D")
    dwc = kind == "DepthwiseConv2D"
    t_in = ctx.l2[el.in_names[0]]
    t_out = ctx.l2[el.out_name]
    win = (ow - 1) * sw + kw
    in0, ob = ctx.buf("in0"), ctx.buf("out")
    k2 = kh * kw
    if has_w:
        entries = {e["c0"]: e for e in weight_chunks(g, el, lp.tp, cfg)}
        m0, shift, zp, lo, hi = _requant_clamp(g, el)
    elif kind == "AvgPool":
        q_in = _quant(g, el.in_names[0])
        q_out = _quant(g, el.out_name)
        m0, shift = encode_scale(q_in.scale / (k2 * q_out.scale))
        zp, lo, hi = q_out.zero_point, 0, 255
        zp_in = q_in.zero_point

    load_seq: dict[int, int] = {}
    resident: dict[int, list[str]] = {}  # bank per chunk now in SRAM
    for tile in layout.channel_tiles(g, el, lp.tp, cfg):
        ci = tile.cluster
        b0, bs = tile.block
        nn = bs // pes
        trows = tile.nrows
        hin_t = (trows - 1) * sh + kh
        y0 = tile.r0 * sh - lph

        if tile.load_in:
            if conv_like:
                cols = (t_in.addr(0, y0, -lpw),) * ncb
                dims = ((win, 1, 1), (hin_t, t_in.wp, win),
                        (cin, t_in.hp * t_in.wp, hin_t * win))
            else:
                cols = tuple(t_in.addr(b0 + n * pes, y0, -lpw) for n in range(nn))
                dims = ((pes, t_in.hp * t_in.wp, 1), (win, 1, pes),
                        (hin_t, t_in.wp, pes * win))
            ctx.dmpa(ci, isa.Desc(isa.DIR_L2S, in0, cols, dims), "in")

        chunks = entries[b0]["chunks"] if has_w else [None]
        n_ch = len(chunks)
        if tile.load_w:
            ctx.dmpa(ci, _channel_b_desc(ctx, entries[b0]), "param")
            k0 = load_seq.get(ci, 0)
            resident[ci] = [("w", "w2")[(k0 + k) % 2] if lp.uses_both_banks
                            else "w" for k in range(n_ch)]
            load_seq[ci] = k0 + n_ch
            if not ctx.skip_w:
                ctx.dmpa(ci, _channel_w_desc(ctx, entries[b0], chunks[0],
                                             ctx.buf(resident[ci][0])), "param")
        banks = resident.get(ci, ["w"] * n_ch)
        ctx.emit(ci, "LMASK", nn, pes)

        for k in range(n_ch):
            ctx.sync(ci)
            if has_w and k + 1 < n_ch and not ctx.skip_w:
                ctx.dmpa(ci, _channel_w_desc(ctx, entries[b0], chunks[k + 1],
                                             ctx.buf(banks[k + 1])), "param")
            last = k == n_ch - 1
            if conv_like:
                ch = chunks[k]
                ctx.agu(ci, 1, ctx.buf(banks[k]), (pes, ch["cisize"] * k2),
                        (0, trows * ow))
                if k == 0:
                    ctx.agu(ci, 2, ctx.buf("bias"))
                else:
                    ctx.agu(ci, 2, ctx.buf("psum"), (4 * pes, trows * ow))
                if last:
                    ctx.agu(ci, 3, ob, (pes, trows * ow))
                else:
                    ctx.agu(ci, 3, ctx.buf("psum"), (4 * pes, trows * ow))
            elif dwc:
                ctx.agu(ci, 1, ctx.buf(banks[k]), (pes, k2), (0, trows * ow))
                ctx.agu(ci, 2, ctx.buf("bias"))
                ctx.agu(ci, 3, ob, (pes, trows * ow))
            else:
                ctx.agu(ci, 3, ob, (pes, trows * ow))
            for y_l in range(trows):
                if conv_like:
                    ctx.agu(ci, 0, in0 + chunks[k]["ci0"] * hin_t * win
                            + y_l * sh * win,
                            (1, kw), (win, kh),
                            (hin_t * win, chunks[k]["cisize"]), (sw, ow))
                else:
                    ctx.agu(ci, 0, in0 + y_l * sh * win * pes,
                            (pes, kw), (pes * win, kh), (pes * sw, ow))
                ctx.emit(ci, "LOOP", ow)
                if conv_like or dwc:
                    if k == 0:
                        ctx.streams[ci].append(_ldacc_sram(2, False))
                    else:
                        ctx.streams[ci].append(_ldacc_sram(2, True))
                    red = chunks[k]["cisize"] * k2 if conv_like else k2
                    ctx.emit(ci, "LOOP", red)
                    ctx.streams[ci].append(isa.mac(
                        ("sram", 0, "b" if conv_like else "v", True),
                        ("sram", 1, "v", True)))
                    ctx.emit(ci, "ENDL")
                    if last:
                        ctx.streams[ci].append(_rqs(3, True, m0, shift, zp, lo, hi))
                    else:
                        ctx.emit(ci, "ST32", 3, 1, isa.ACC_REG)
                elif kind == "MaxPool":
                    ctx.emit(ci, "LD8", 0, 0, 1)
                    for _ in range(k2 - 1):
                        ctx.streams[ci].append(_alu_sram("max", 0, 0, True))
                    ctx.emit(ci, "ST8", 3, 1, 0)
                else:  # AvgPool
                    ctx.streams[ci].append(_ldacc_imm(-k2 * zp_in))
                    for _ in range(k2):
                        ctx.streams[ci].append(_alu_sram("add", isa.ACC_REG, 0, True))
                    ctx.streams[ci].append(_rqs(3, True, m0, shift, zp, lo, hi))
                ctx.emit(ci, "ENDL")

        cols = tuple(t_out.addr(b0 + n * pes, tile.r0, 0) for n in range(nn))
        dims = ((pes, t_out.hp * t_out.wp, 1), (ow, 1, pes),
                (trows, t_out.wp, ow * pes))
        ctx.dmpa(ci, isa.Desc(isa.DIR_S2L, ob, cols, dims), "out")


# -------------------------------------------------------- linear template

def _emit_linear(ctx: _Ctx) -> None:
    g, el, lp, cfg = ctx.g, ctx.el, ctx.lp, ctx.cfg
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    _, c, h, w = g.tensors[el.out_name].shape
    wl = ceil8(w)
    nf, rem = divmod(h, ncb)
    n_in = len(el.in_names)
    tens = [ctx.l2[n] for n in el.in_names] + [ctx.l2[el.out_name]]
    bufs = [ctx.buf(f"in{i}") for i in range(n_in)] + [ctx.buf("out")]
    agus = list(range(n_in)) + [3]

    kind = el.kind
    q_out = _quant(g, el.out_name if el.act is None else el.layer.outputs[0])
    if kind == "Add":
        arms = []
        for name in el.in_names:
            qi = _quant(g, name)
            am0, ash = encode_scale(qi.scale / q_out.scale)
            arms.append((qi.zero_point, am0, ash))
        lo, hi = _add_clamp(g, el)
        zp_o = q_out.zero_point
    else:
        zp_o = q_out.zero_point
        q6 = min(255, zp_o + int(round(6.0 / q_out.scale)))

    def chain(ci: int) -> None:
        if kind == "Add":
            for i, (zpi, am0, ash) in enumerate(arms):
                ctx.emit(ci, "LD8", i, agus[i], 1)
                ctx.streams[ci].append(_alu_imm("sub", i, zpi))
                ctx.emit(ci, "MULQ", i, am0, ash)
            ctx.streams[ci].append(_alu_reg("add", 0, 1))
            ctx.streams[ci].append(_alu_imm("add", 0, zp_o))
            ctx.streams[ci].append(_alu_imm("max", 0, lo))
            ctx.streams[ci].append(_alu_imm("min", 0, hi))
            ctx.emit(ci, "ST8", 3, 1, 0)
        else:
            ctx.emit(ci, "LD8", 0, agus[0], 1)
            ctx.streams[ci].append(_alu_imm("max", 0, zp_o))
            if kind == "ReLU6":
                ctx.streams[ci].append(_alu_imm("min", 0, q6))
            ctx.emit(ci, "ST8", 3, 1, 0)

    for tile in layout.linear_tiles(g, el, lp.tp, cfg):
        ci, ch = tile.cluster, tile.channel
        for t, off, direction in (
            [(tens[i], bufs[i], isa.DIR_L2S) for i in range(n_in)]
            + [(tens[-1], bufs[-1], isa.DIR_S2L)]
        ):
            if direction == isa.DIR_S2L:
                continue  # outputs drain after compute
            _linear_descs(ctx, ci, t, ch, off, direction, w, wl, nf, rem)
        ctx.sync(ci)
        ctx.emit(ci, "LMASK", ncb, pes)
        for i in range(n_in + 1):
            ctx.agu(ci, agus[i], bufs[i], (pes, (nf + (1 if rem else 0)) * wl // pes))
        if nf:
            ctx.emit(ci, "LOOP", nf * (wl // pes))
            chain(ci)
            ctx.emit(ci, "ENDL")
        if rem:
            ctx.emit(ci, "LMASK", rem, pes)
            ctx.emit(ci, "LOOP", wl // pes)
            chain(ci)
            ctx.emit(ci, "ENDL")
            ctx.emit(ci, "LMASK", ncb, pes)
        _linear_descs(ctx, ci, tens[-1], ch, bufs[-1], isa.DIR_S2L, w, wl, nf, rem)


def _linear_descs(ctx: _Ctx, ci: int, t: L2Tensor, ch: int, off: int,
                  direction: int, w: int, wl: int, nf: int, rem: int) -> None:
    ncb = ctx.cfg.ncb_per_cluster
    cat = "in" if direction == isa.DIR_L2S else "out"
    if nf:
        cols = tuple(t.addr(ch, j, 0) for j in range(ncb))
        dims = ((w, 1, 1), (nf, ncb * t.wp, wl))
        ctx.dmpa(ci, isa.Desc(direction, off, cols, dims), cat)
    if rem:
        cols = tuple(t.addr(ch, nf * ncb + j, 0) for j in range(rem))
        ctx.dmpa(ci, isa.Desc(direction, off + nf * wl, cols, ((w, 1, 1),)), cat)


# ------------------------------------------------------------ entry point

def emit_program(g: GraphIR, plan: MappingPlan, cfg: HardwareConfig,
                 prefetch: set[str] | None = None):
    """Lower a mapped graph. Returns (Program, init, meta); init maps the
    'weights' region to its byte image, meta describes host-side packing.

    prefetch names layers whose single weight descriptor is issued inside
    the previous layer's streams (the scheduler decides the set)."""
    steps = layout.build_exec_layers(g)
    prefetch = set(prefetch or ())
    if steps:
        prefetch.discard(steps[0].id)  # nothing precedes the first layer
    l2 = layout.build_l2_tensors(g, steps)
    for name, t in l2.items():
        t.offset = plan.l2_tensors[name]["offset"]
    blob = build_weight_blob(g, steps, plan, cfg)

    ctx = _Ctx(g, plan, cfg, l2,
               [[] for _ in range(cfg.num_clusters)], {}, {})
    emitters = {"spatial": _emit_spatial, "channel": _emit_channel,
                "linear": _emit_linear}
    for i, el in enumerate(steps):
        lp = plan.layer(el.id)
        ctx.el, ctx.lp = el, lp
        ctx.synced = [False] * cfg.num_clusters
        ctx.skip_w = el.id in prefetch
        ctx.inject = []
        if i + 1 < len(steps) and steps[i + 1].id in prefetch:
            nel, nlp = steps[i + 1], plan.layer(steps[i + 1].id)
            d = prefetch_desc(g, plan, cfg, nel, nlp, l2)
            for tile in layout.iter_tiles(g, nel, nlp.tp, cfg):
                if tile.load_w:
                    ctx.inject.append((tile.cluster, d, nel.id))
        for ci in range(cfg.num_clusters):
            ctx.emit(ci, "MARK", el.step + 1)
        _emit_fill(ctx)
        emitters[lp.tp.template](ctx)
        # anything not injected yet (layer had no SYNC on that cluster)
        for tci, d, owner in ctx.inject:
            if not ctx.synced[tci]:
                ctx.dmpa(tci, d, "param", owner=owner)
        for ci in range(cfg.num_clusters):
            ctx.emit(ci, "BAR")
        ctx.synced = [True] * cfg.num_clusters

    for ci in range(cfg.num_clusters):
        ctx.emit(ci, "SYNC", isa.SYNC_DMPA)
        ctx.emit(ci, "HALT")

    _check_moved(plan, ctx.moved)

    host, meta = _host_stream(g, plan, l2)
    descs = {did: d for d, did in ctx.descs.items()}
    prog = isa.Program(cfg.num_clusters, ctx.streams, descs, host,
                       dict(plan.regions))
    meta["markers"] = {el.id: el.step + 1 for el in steps}
    return prog, {"weights": blob}, meta


def _check_moved(plan: MappingPlan, moved: dict) -> None:
    for lp in plan.layers:
        got = {cat: moved.get((lp.layer_id, cat), 0)
               for cat in ("in", "param", "out", "fill")}
        want = {"in": lp.bytes_in, "param": lp.bytes_param,
                "out": lp.bytes_out, "fill": lp.bytes_fill}
        if got != want:
            raise AssertionError(
                f"layer {lp.layer_id!r}: emitted transfers {got} do not "
                f"match the plan {want}")


def _host_stream(g: GraphIR, plan: MappingPlan, l2: dict[str, L2Tensor]):
    host = []
    meta = {"inputs": [], "outputs": []}
    off, _ = plan.regions["staging_in"]
    cur = 0
    for name in g.inputs:
        t = l2[name]
        host.append(isa.HostCmd("dma", (t.offset, off + cur, t.nbytes)))
        meta["inputs"].append({
            "name": name, "staging_off": cur, "shape": list(t.shape),
            "pad_h": t.pad_h, "pad_w": t.pad_w,
            "zero_point": _quant(g, name).zero_point,
        })
        cur += t.nbytes
    host.append(isa.HostCmd("wait", ("dma",)))
    host.append(isa.HostCmd("launch", ()))
    host.append(isa.HostCmd("wait", ("clusters",)))
    out_off, _ = plan.regions["staging_out"]
    cur = 0
    for name in g.outputs:
        t = l2[name]
        _, c, h, w = t.shape
        if t.pad_h == 0 and t.pad_w == 0:
            host.append(isa.HostCmd("dma", (out_off + cur, t.offset, c * h * w)))
        else:
            for ch in range(c):
                for y in range(h):
                    host.append(isa.HostCmd(
                        "dma", (out_off + cur + (ch * h + y) * w,
                                t.addr(ch, y, 0), w)))
        meta["outputs"].append({"name": name, "staging_off": cur,
                                "shape": [1, c, h, w]})
        cur += c * h * w
    host.append(isa.HostCmd("wait", ("all",)))
    return host, meta


# -------------------------------------------------------- host-side data

def pack_inputs(meta: dict, values: dict[str, np.ndarray]) -> np.ndarray:
    """Build the staging_in image: each graph input padded to its L2
    layout with the pad margin set to its zero-point."""
    total = 0
    for m in meta["inputs"]:
        _, c, h, w = m["shape"]
        total = max(total, m["staging_off"]
                    + c * (h + 2 * m["pad_h"]) * (w + 2 * m["pad_w"]))
    out = np.zeros(total, dtype=np.uint8)
    for m in meta["inputs"]:
        name = m["name"]
        if name not in values:
            raise MapError(f"missing input tensor {name!r}")
        _, c, h, w = m["shape"]
        ph, pw = m["pad_h"], m["pad_w"]
        arr = np.asarray(values[name], dtype=np.uint8).reshape(c, h, w)
        padded = np.full((c, h + 2 * ph, w + 2 * pw), m["zero_point"],
                         dtype=np.uint8)
        padded[:, ph:ph + h, pw:pw + w] = arr
        out[m["staging_off"]:m["staging_off"] + padded.size] = padded.reshape(-1)
    return out


def unpack_outputs(meta: dict, staging: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    for m in meta["outputs"]:
        n, c, h, w = m["shape"]
        flat = staging[m["staging_off"]:m["staging_off"] + c * h * w]
        out[m["name"]] = flat.reshape(n, c, h, w).copy()
    return out
