"""Shared deployment geometry: execution view, padded L2 tensor layout,
compute templates, exact transfer accounting and tile enumeration.

Both the mapper (candidate costing) and codegen (descriptor and loop
emission) build on this module, so planned and emitted traffic agree
byte-for-byte; codegen asserts that agreement when it runs.

Activations live in L2 as [C][H + 2*pad_h][W + 2*pad_w] with the pad
cells materialized (the tensor's zero-point), so every patch read is a
uniform strided walk and zero-point handling folds into the bias.

Templates:
  spatial: 16 output pixels per group (one per NCB), 8 output channels
    (or depthwise channels) per PE lane; weights replicated across NCBs.
    Wins while activations dominate traffic.
  channel: up to 128 output channels across the lane grid, pixels
    iterated serially; output rows split across clusters (channel blocks
    for GlobalAvgPool/Dense). Wins for deep layers where weights
    dominate. Weight blocks ping-pong between the two top SRAM banks so
    block loads hide behind compute.
  linear: elementwise layers (Add, standalone ReLU/ReLU6); channels
    split across clusters, rows across NCBs.
"""

from __future__ import annotations

from dataclasses import dataclass

from j3dsim.config import HardwareConfig
from j3dsim.ir import GraphIR, LayerNode, topological_order

CONV_KINDS = ("Conv2D", "DepthwiseConv2D", "Dense")
ACT_KINDS = ("ReLU", "ReLU6")
POOL_KINDS = ("MaxPool", "AvgPool", "GlobalAvgPool")
SUPPORTED_KINDS = CONV_KINDS + ACT_KINDS + POOL_KINDS + ("Add",)


class MapError(ValueError):
    pass


def cdiv(a: int, b: int) -> int:
    return -(-a // b)


def ceil8(x: int) -> int:
    return (x + 7) & ~7


def align(x: int, a: int = 64) -> int:
    return (x + a - 1) // a * a


def split_range(total: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous near-even split of [0, total) into `parts` ranges."""
    return [(total * i // parts, total * (i + 1) // parts) for i in range(parts)]


# ---------------------------------------------------------- execution view

@dataclass
class ExecLayer:
    """One execution step: a compute layer plus an optionally fused
    activation; out_name is the tensor written back to L2."""

    step: int
    layer: LayerNode
    act: LayerNode | None
    in_names: list[str]
    out_name: str
    w_name: str | None = None
    b_name: str | None = None

    @property
    def id(self) -> str:
        return self.layer.id

    @property
    def kind(self) -> str:
        return self.layer.kind


def build_exec_layers(g: GraphIR) -> list[ExecLayer]:
    """Fuse ReLU/ReLU6 into the producer when it is the sole consumer.
    Unsupported kinds raise MapError naming the layer."""
    order = topological_order(g)
    fused: dict[str, LayerNode] = {}
    skip: set[str] = set()
    for layer in order:
        if layer.kind not in ACT_KINDS:
            continue
        src = layer.inputs[0]
        producer = g.producer_of(src)
        if (
            producer is not None
            and producer.kind in CONV_KINDS + ("Add",)
            and len(g.consumers_of(src)) == 1
            and src not in g.outputs
        ):
            fused[producer.id] = layer
            skip.add(layer.id)
    steps: list[ExecLayer] = []
    for layer in order:
        if layer.id in skip:
            continue
        if layer.kind not in SUPPORTED_KINDS:
            raise MapError(f"layer {layer.id!r}: unsupported layer kind {layer.kind!r}")
        if layer.kind == "Conv2D" and int(layer.attrs.get("groups", 1)) != 1:
            raise MapError(f"layer {layer.id!r}: grouped convolution is unsupported")
        act = fused.get(layer.id)
        out_name = act.outputs[0] if act else layer.outputs[0]
        if layer.kind in CONV_KINDS:
            ins = [layer.inputs[0]]
            w = layer.inputs[1]
            b = layer.inputs[2] if len(layer.inputs) > 2 else None
        else:
            ins = list(layer.inputs)
            w = b = None
        steps.append(ExecLayer(len(steps), layer, act, ins, out_name, w, b))
    return steps


# -------------------------------------------------------------- L2 tensors

@dataclass
class L2Tensor:
    name: str
    shape: tuple[int, int, int, int]  # N,C,H,W
    pad_h: int
    pad_w: int
    offset: int = -1

    @property
    def hp(self) -> int:
        return self.shape[2] + 2 * self.pad_h

    @property
    def wp(self) -> int:
        return self.shape[3] + 2 * self.pad_w

    @property
    def nbytes(self) -> int:
        return self.shape[1] * self.hp * self.wp

    def addr(self, c: int, y: int, x: int) -> int:
        """L2 offset of element (c, y, x); y/x may reach into the pad
        margin with values down to -pad."""
        return self.offset + ((c * self.hp + y + self.pad_h) * self.wp + x + self.pad_w)

    def fill_bytes(self) -> int:
        c, h, w = self.shape[1], self.shape[2], self.shape[3]
        return c * (self.hp * self.wp - h * w)


def _layer_pad(layer: LayerNode) -> tuple[int, int]:
    if layer.kind in ("Conv2D", "DepthwiseConv2D", "MaxPool", "AvgPool"):
        ph, pw = layer.attrs.get("padding", [0, 0])
        return int(ph), int(pw)
    return 0, 0


def build_l2_tensors(g: GraphIR, steps: list[ExecLayer]) -> dict[str, L2Tensor]:
    names: set[str] = set(g.inputs) | set(g.outputs)
    for el in steps:
        names.update(el.in_names)
        names.add(el.out_name)
    out: dict[str, L2Tensor] = {}
    for name in sorted(names):
        shape = tuple(g.tensors[name].shape)
        ph = pw = 0
        for el in steps:
            if name == el.in_names[0]:
                lph, lpw = _layer_pad(el.layer)
                ph, pw = max(ph, lph), max(pw, lpw)
        out[name] = L2Tensor(name, shape, ph, pw)
    return out


# ---------------------------------------------------------- template params

@dataclass(frozen=True)
class TemplateParams:
    template: str  # spatial | channel | linear
    gt: int = 0  # pixel groups per tile (spatial)
    ct: int = 0  # output channels per weight tile (spatial)
    rt: int = 0  # output rows per tile (channel)
    order: str = "w_outer"  # which buffer persists across inner tiles

    def to_json(self):
        return {"template": self.template, "gt": self.gt, "ct": self.ct,
                "rt": self.rt, "order": self.order}

    @staticmethod
    def from_json(d) -> "TemplateParams":
        return TemplateParams(d["template"], d["gt"], d["ct"], d["rt"], d["order"])


def conv_attrs(g: GraphIR, el: ExecLayer):
    """(kh, kw, sh, sw, ph, pw, cin, cout, oh, ow) for windowed layers;
    Dense is treated as a 1x1 convolution over a 1x1 map."""
    a = el.layer.attrs
    if el.kind == "Dense":
        kh = kw = sh = sw = 1
        ph = pw = 0
    else:
        kh, kw = (int(x) for x in a.get("kernel", [1, 1]))
        sh, sw = (int(x) for x in a.get("stride", [1, 1]))
        ph, pw = (int(x) for x in a.get("padding", [0, 0]))
    _, cin, _, _ = g.tensors[el.in_names[0]].shape
    _, cout, oh, ow = g.tensors[el.out_name].shape
    return kh, kw, sh, sw, ph, pw, cin, cout, oh, ow


def _csegs(cout: int, ct: int) -> list[tuple[int, int]]:
    return [(c0, min(ct, cout - c0)) for c0 in range(0, cout, ct)]


def _blocks(cout: int, lanes: int) -> list[tuple[int, int]]:
    return [(b0, min(lanes, cout - b0)) for b0 in range(0, cout, lanes)]


def macs_per_out(g: GraphIR, el: ExecLayer) -> int:
    kh, kw, _, _, _, _, cin, _, _, _ = conv_attrs(g, el)
    if el.kind == "DepthwiseConv2D":
        return kh * kw
    return cin * kh * kw


# -------------------------------------------------------------- cost model

@dataclass
class Geometry:
    """Exact traffic, buffer sizes and an issue-count estimate for one
    layer under one template parameterization."""

    tp: TemplateParams
    buffers: dict[str, int]  # logical buffer -> bytes per NCB
    bytes_in: int
    bytes_param: int
    bytes_out: int
    bytes_fill: int
    issues: list[int]  # instruction issues per cluster
    macs: int
    n_param_loads: int  # distinct parameter load points (1 => prefetchable)
    uses_both_banks: bool = False

    @property
    def bytes_moved(self) -> int:
        return self.bytes_in + self.bytes_param + self.bytes_out + self.bytes_fill


def _per_px_issues(kind: str, pb: int) -> int:
    """Issues per output position in channel-style inner loops; pb is the
    reduction length (window size for pools and depthwise)."""
    if kind in ("Conv2D", "Dense", "DepthwiseConv2D"):
        return pb + 3  # LDACC + LOOP + MACs + RQS
    if kind == "MaxPool":
        return pb + 1  # LD8 + (k2-1) max + ST8
    return pb + 2  # AvgPool: LDACC + k2 add + RQS


def fill_issues(t: L2Tensor) -> int:
    """Pad-fill descriptors the producing layer issues on cluster 0."""
    return (2 if t.pad_h else 0) + (2 if t.pad_w else 0)


def cin_chunks(cin: int, kh: int, kw: int, cfg: HardwareConfig) -> list[tuple[int, int]]:
    """Reduction chunking of the input channels so one weight chunk per
    block fits a single SRAM bank; partial sums stage through SRAM as
    int32 between chunks."""
    it = cfg.ncb_bank_bytes // (kh * kw * cfg.pes_per_ncb)
    if it < 1:
        return []
    it = min(it, cin)
    return [(c0, min(it, cin - c0)) for c0 in range(0, cin, it)]


def spatial_geometry(g: GraphIR, el: ExecLayer, tp: TemplateParams,
                     cfg: HardwareConfig, l2: dict[str, L2Tensor]) -> Geometry | None:
    if el.kind not in ("Conv2D", "DepthwiseConv2D"):
        return None
    kh, kw, sh, sw, ph, pw, cin, cout, oh, ow = conv_attrs(g, el)
    dw = el.kind == "DepthwiseConv2D"
    if dw and (cout % 8 or tp.ct % 8):
        return None
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    gt, ct = tp.gt, tp.ct
    if gt < 1 or ct < 1 or ct > ceil8(cout):
        return None
    if dw and tp.order == "in_outer":
        return None  # identical input traffic to w_outer, never better
    csegs = _csegs(cout, ct)
    ct8 = ceil8(min(ct, cout))
    pb_w = kh * kw if dw else cin * kh * kw
    mpo = macs_per_out(g, el)

    buffers = {
        "in0": gt * (ct8 * kh * kw if dw else cin * kh * kw),
        "w": ct8 * pb_w,
        "bias": 4 * ct8,
        "out": gt * ct8,
    }

    total_px = oh * ow
    bytes_in = bytes_param = bytes_out = 0
    issues = []
    w_load_bytes = [ncb * (ceil8(cs) * pb_w + 4 * ceil8(cs)) for _, cs in csegs]
    for p0, p1 in split_range(total_px, cfg.num_clusters):
        npx = p1 - p0
        iss = 2  # MARK + BAR
        if npx == 0:
            issues.append(iss)
            continue
        ngroups = cdiv(npx, ncb)
        n_gt = cdiv(ngroups, gt)
        per_px_in = [ceil8(cs) * kh * kw if dw else cin * kh * kw for _, cs in csegs]
        if tp.order == "w_outer":
            bytes_param += sum(w_load_bytes)
            bytes_in += sum(npx * b for b in per_px_in)
        else:
            bytes_param += n_gt * sum(w_load_bytes)
            bytes_in += sum(npx * b for b in per_px_in) if dw else npx * per_px_in[0]
        bytes_out += npx * cout
        for ci_seg, (c0, cs) in enumerate(csegs):
            ncog = cdiv(cs, pes)
            iss += 2 * (1 if tp.order == "w_outer" else n_gt)  # w + bias descs
            for ti in range(n_gt):
                g_lo = ti * gt
                g_hi = min(g_lo + gt, ngroups)
                ngr = g_hi - g_lo
                last_partial = (g_hi == ngroups) and (npx % ncb != 0)
                gfull = ngr - (1 if last_partial else 0)
                if tp.order == "w_outer" or dw or ci_seg == 0:
                    iss += ngr  # in descs
                iss += 1 + 4  # SYNC + AGUs
                for k in range(ncog):
                    iss += 1  # LMASK
                    if gfull:
                        iss += 1 + gfull * (mpo + 3)
                    if last_partial:
                        iss += 1 + (mpo + 3)
                iss += ngr * (2 if cs % pes else 1)  # out descs
        issues.append(iss)
    issues[0] += fill_issues(l2[el.out_name])
    macs = cout * mpo * total_px
    return Geometry(tp, buffers, bytes_in, bytes_param, bytes_out,
                    l2[el.out_name].fill_bytes(), issues, macs,
                    n_param_loads=(len(csegs) if tp.order == "w_outer" else 10**9))


def channel_geometry(g: GraphIR, el: ExecLayer, tp: TemplateParams,
                     cfg: HardwareConfig, l2: dict[str, L2Tensor]) -> Geometry | None:
    if el.kind == "Add":
        return None
    kh, kw, sh, sw, ph, pw, cin, cout, oh, ow = conv_attrs(g, el)
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    lanes = ncb * pes
    if cout % pes:
        return None
    kind = el.kind
    conv_like = kind in ("Conv2D", "Dense")
    blocks = _blocks(cout, lanes)
    mpo = macs_per_out(g, el)

    chunks = cin_chunks(cin, kh, kw, cfg) if conv_like else [(0, cin)]
    if not chunks:
        return None
    n_ch = len(chunks)

    if kind in ("Dense", "GlobalAvgPool"):
        # channel blocks split across clusters, full input map per block
        ih, iw = g.tensors[el.in_names[0]].shape[2:]
        hw = ih * iw
        buffers = {
            "in0": cin if kind == "Dense" else hw * pes,
            "w": chunks[0][1] * pes if kind == "Dense" else 0,
            "bias": 32 if kind == "Dense" else 0,
            "out": pes,
            "psum": 4 * pes if (kind == "Dense" and n_ch > 1) else 0,
        }
        bytes_in = bytes_param = bytes_out = 0
        issues = []
        n_loads = 0
        for b_lo, b_hi in split_range(len(blocks), cfg.num_clusters):
            iss = 2
            for b0, bs in blocks[b_lo:b_hi]:
                nn = bs // pes
                if kind == "Dense":
                    bytes_in += nn * cin
                    bytes_param += cin * bs + 4 * bs
                    iss += (2 + n_ch) + 1 + 3 + 2 * n_ch \
                        + (2 if n_ch > 1 else 0) + (cin + 3 * n_ch) + 1
                    n_loads += n_ch
                else:
                    bytes_in += nn * hw * pes
                    iss += 1 + 1 + 1 + 2 + (hw + 3) + 1
                bytes_out += bs
            issues.append(iss)
        issues[0] += fill_issues(l2[el.out_name])
        uses_both = kind == "Dense" and (len(blocks) * n_ch) > 1
        return Geometry(tp, buffers, bytes_in, bytes_param, bytes_out,
                        l2[el.out_name].fill_bytes(), issues,
                        cout * cin if kind == "Dense" else 0,
                        n_param_loads=n_loads,
                        uses_both_banks=uses_both)

    dwlike = kind in ("DepthwiseConv2D", "MaxPool", "AvgPool")
    if dwlike and cout != cin:
        return None
    rt = tp.rt
    if rt < 1 or rt > oh:
        return None
    if kind == "Conv2D" and tp.order == "w_outer" and len(blocks) * n_ch > 1 and any(
            (r1 - r0) > rt for r0, r1 in split_range(oh, cfg.num_clusters)):
        # weights persisting across row tiles would need every block's
        # weights resident; only the row-major variant is implemented
        return None
    win = (ow - 1) * sw + kw
    row_splits = split_range(oh, cfg.num_clusters)
    hin_max = 0
    for r0, r1 in row_splits:
        for t0 in range(r0, r1, rt):
            trows = min(rt, r1 - t0)
            hin_max = max(hin_max, (trows - 1) * sh + kh)
    has_w = kind in ("Conv2D", "DepthwiseConv2D")
    rt_eff = min(rt, oh)
    buffers = {
        "in0": cin * hin_max * win if conv_like else hin_max * win * pes,
        "w": (chunks[0][1] * kh * kw * pes if conv_like else kh * kw * pes)
        if has_w else 0,
        "bias": 32 if has_w else 0,
        "out": rt_eff * ow * pes,
        "psum": 4 * pes * rt_eff * ow if (conv_like and n_ch > 1) else 0,
    }
    w_block_bytes = [(mpo * bs + 4 * bs) if has_w else 0 for _, bs in blocks]
    per_px = _per_px_issues(kind, mpo if conv_like else kh * kw)

    bytes_in = bytes_param = bytes_out = 0
    issues = []
    n_loads = 0  # worst per-cluster weight descriptor count
    for r0, r1 in row_splits:
        iss = 2
        cl_loads = 0
        tiles = list(range(r0, r1, rt))
        for t0 in tiles:
            trows = min(rt, r1 - t0)
            hin_t = (trows - 1) * sh + kh
            if conv_like:
                in_t = cin * hin_t * win * ncb  # replicated
                bytes_in += in_t
                iss += 1  # single in desc per row tile
                if tp.order != "w_outer" or t0 == tiles[0]:
                    bytes_param += sum(w_block_bytes)
                    cl_loads += len(blocks) * n_ch
                    iss += (1 + n_ch) * len(blocks)
            else:
                bytes_in += hin_t * win * pes * (cout // pes)
                iss += len(blocks)  # one distributed in desc per block
                if has_w:
                    bytes_param += sum(w_block_bytes)
                    cl_loads += len(blocks)
                    iss += 2 * len(blocks)
            for b0, bs in blocks:
                bytes_out += bs * trows * ow
                if conv_like:
                    # LMASK + per chunk (SYNC + 3 AGU) + per row per chunk
                    # (AGU + LOOP) + pixels + out desc
                    iss += 2 + 4 * n_ch + 2 * trows * n_ch \
                        + trows * ow * (mpo + 3 * n_ch)
                else:
                    iss += 2 + 1 + (3 if has_w else 1) + trows * (2 + ow * per_px)
        issues.append(iss)
        n_loads = max(n_loads, cl_loads)
    issues[0] += fill_issues(l2[el.out_name])
    macs = cout * mpo * oh * ow if has_w else 0
    return Geometry(tp, buffers, bytes_in, bytes_param, bytes_out,
                    l2[el.out_name].fill_bytes(), issues, macs,
                    n_param_loads=n_loads,
                    uses_both_banks=has_w and len(blocks) * n_ch > 1)


def linear_geometry(g: GraphIR, el: ExecLayer, tp: TemplateParams,
                    cfg: HardwareConfig, l2: dict[str, L2Tensor]) -> Geometry | None:
    if el.kind not in ("Add", "ReLU", "ReLU6"):
        return None
    _, c, h, w = g.tensors[el.out_name].shape
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    wl = ceil8(w)
    nf, rem = divmod(h, ncb)
    rows_buf = nf + (1 if rem else 0)
    n_in = len(el.in_names)
    buffers = {f"in{i}": rows_buf * wl for i in range(n_in)}
    buffers["out"] = rows_buf * wl
    per8 = 11 if el.kind == "Add" else (4 if el.kind == "ReLU6" else 3)
    bytes_in = bytes_out = 0
    issues = []
    for c0, c1 in split_range(c, cfg.num_clusters):
        nch = c1 - c0
        bytes_in += nch * h * w * n_in
        bytes_out += nch * h * w
        ndesc = (1 if nf else 0) + (1 if rem else 0)
        per_ch = ndesc * (n_in + 1) + 1 + (n_in + 1)  # descs + SYNC + AGUs
        if nf:
            per_ch += 1 + nf * (wl // pes) * per8
        if rem:
            per_ch += 2 + 1 + (wl // pes) * per8  # LMASK pair + LOOP body
        issues.append(2 + nch * per_ch)
    issues[0] += fill_issues(l2[el.out_name])
    return Geometry(tp, buffers, bytes_in, 0, bytes_out,
                    l2[el.out_name].fill_bytes(), issues, 0, n_param_loads=0)


def layer_geometry(g, el, tp, cfg, l2) -> Geometry | None:
    fn = {"spatial": spatial_geometry, "channel": channel_geometry,
          "linear": linear_geometry}[tp.template]
    return fn(g, el, tp, cfg, l2)


def buffers_fit(buffers: dict[str, int], uses_both_banks: bool,
                cfg: HardwareConfig) -> tuple[bool, bool]:
    """(fits, maskable). Maskable layouts keep io buffers (including the
    bias words, which load in the pre-SYNC slot of each tile) in the low
    banks and weights in a dedicated top bank (both top banks when weight
    blocks ping-pong), so weight transfers never share a bank with
    compute."""
    io = sum(v for k, v in buffers.items() if k != "w")
    if uses_both_banks:
        io += buffers.get("bias", 0)  # bias ping-pongs in io space too
    wb = buffers.get("w", 0)
    nb, bank = cfg.ncb_sram_banks, cfg.ncb_bank_bytes
    maskable = nb >= 3 and wb <= bank and io <= (nb - 2) * bank
    fits = maskable or (io + wb <= nb * bank and not uses_both_banks)
    return fits, maskable


def candidate_templates(g: GraphIR, el: ExecLayer, cfg: HardwareConfig,
                        exhaustive: bool = False) -> list[TemplateParams]:
    """Tile-shape lattice for one layer. The default lattice is pruned to
    powers of two plus the extremes; exhaustive=True enumerates every
    group/channel/row count (the brute-force reference)."""
    kind = el.kind
    if kind in ("Add", "ReLU", "ReLU6"):
        return [TemplateParams("linear")]
    _, cout, oh, ow = g.tensors[el.out_name].shape
    ncb = cfg.ncb_per_cluster
    cands: list[TemplateParams] = []
    if kind in ("Conv2D", "DepthwiseConv2D"):
        gmax = max(cdiv(max(p1 - p0 for p0, p1 in
                            split_range(oh * ow, cfg.num_clusters)), ncb), 1)
        if exhaustive:
            gts = list(range(1, gmax + 1))
            cts = list(range(8, ceil8(cout) + 1, 8))
        else:
            gts = sorted({v for v in (1, 2, 4, 8, 16, 32, 64, 128, gmax) if v <= gmax})
            cts = sorted({v for v in (8, 16, 32, 64, 128, 256, 512, ceil8(cout))
                          if v <= ceil8(cout)})
        for gt in gts:
            for ct in cts:
                for order in ("w_outer", "in_outer"):
                    cands.append(TemplateParams("spatial", gt=gt, ct=ct, order=order))
    if kind in ("Dense", "GlobalAvgPool"):
        cands.append(TemplateParams("channel", rt=1))
    elif kind in ("Conv2D", "DepthwiseConv2D", "MaxPool", "AvgPool"):
        if exhaustive:
            rts = list(range(1, oh + 1))
        else:
            rts = sorted({v for v in (1, 2, 4, 8, 16, 32, oh) if v <= oh})
        for rt in rts:
            for order in ("w_outer", "in_outer"):
                cands.append(TemplateParams("channel", rt=rt, order=order))
    return cands


# ------------------------------------------------------------- tile records

@dataclass
class Tile:
    """One unit of SRAM residency on one cluster; codegen turns each into
    descriptors plus a compute block."""

    cluster: int
    load_w: bool = False
    # spatial
    cseg: tuple[int, int] | None = None  # (c0, csize)
    px0: int = 0
    npx: int = 0
    # channel
    block: tuple[int, int] | None = None
    r0: int = 0
    nrows: int = 0
    load_in: bool = True
    block_index: int = 0
    n_blocks: int = 1
    # linear
    channel: int = -1


def spatial_tiles(g, el, tp, cfg) -> list[Tile]:
    _, _, _, _, _, _, _, cout, oh, ow = conv_attrs(g, el)
    ncb = cfg.ncb_per_cluster
    csegs = _csegs(cout, tp.ct)
    tiles: list[Tile] = []
    for ci, (p0, p1) in enumerate(split_range(oh * ow, cfg.num_clusters)):
        npx = p1 - p0
        if npx == 0:
            continue
        ngroups = cdiv(npx, ncb)
        gchunks = []
        for g_lo in range(0, ngroups, tp.gt):
            g_hi = min(g_lo + tp.gt, ngroups)
            px_lo = p0 + g_lo * ncb
            px_hi = min(p0 + g_hi * ncb, p1)
            gchunks.append((px_lo, px_hi - px_lo))
        dw = el.kind == "DepthwiseConv2D"
        if tp.order == "w_outer":
            for cseg in csegs:
                for i, (px0, n) in enumerate(gchunks):
                    tiles.append(Tile(ci, load_w=(i == 0), cseg=cseg, px0=px0, npx=n))
        else:
            for px0, n in gchunks:
                for k, cseg in enumerate(csegs):
                    tiles.append(Tile(ci, load_w=True, cseg=cseg, px0=px0, npx=n,
                                      load_in=(dw or k == 0)))
    return tiles


def channel_tiles(g, el, tp, cfg) -> list[Tile]:
    kh, kw, sh, sw, ph, pw, cin, cout, oh, ow = conv_attrs(g, el)
    pes = cfg.pes_per_ncb
    lanes = cfg.ncb_per_cluster * pes
    blocks = _blocks(cout, lanes)
    tiles: list[Tile] = []
    if el.kind in ("Dense", "GlobalAvgPool"):
        for ci, (b_lo, b_hi) in enumerate(split_range(len(blocks), cfg.num_clusters)):
            for k, bi in enumerate(range(b_lo, b_hi)):
                tiles.append(Tile(ci, load_w=el.kind == "Dense", block=blocks[bi],
                                  r0=0, nrows=1, block_index=k,
                                  n_blocks=b_hi - b_lo))
        return tiles
    conv_like = el.kind == "Conv2D"
    has_w = el.kind in ("Conv2D", "DepthwiseConv2D")
    for ci, (r0, r1) in enumerate(split_range(oh, cfg.num_clusters)):
        row_tiles = list(range(r0, r1, tp.rt))
        for ti, t0 in enumerate(row_tiles):
            trows = min(tp.rt, r1 - t0)
            for bi, blk in enumerate(blocks):
                load_w = has_w and (not conv_like or tp.order != "w_outer" or ti == 0)
                tiles.append(Tile(ci, load_w=load_w, block=blk, r0=t0, nrows=trows,
                                  load_in=(not conv_like) or bi == 0,
                                  block_index=bi, n_blocks=len(blocks)))
    return tiles


def linear_tiles(g, el, tp, cfg) -> list[Tile]:
    _, c, _, _ = g.tensors[el.out_name].shape
    tiles: list[Tile] = []
    for ci, (c0, c1) in enumerate(split_range(c, cfg.num_clusters)):
        for ch in range(c0, c1):
            tiles.append(Tile(ci, channel=ch))
    return tiles


def iter_tiles(g, el, tp, cfg) -> list[Tile]:
    fn = {"spatial": spatial_tiles, "channel": channel_tiles,
          "linear": linear_tiles}[tp.template]
    return fn(g, el, tp, cfg)
