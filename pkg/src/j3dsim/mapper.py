"""Mapping: choose a template and tile shape per layer, place SRAM
buffers, and allocate padded activations plus weight blobs in L2.

Objective per layer: minimize bytes moved over the DMPA, then the
worst-cluster issue count. Layouts are "maskable" when io buffers stay in
the low SRAM banks and parameters in a dedicated top bank, which lets
parameter transfers overlap compute with zero bank-conflict stalls;
weight banks alternate between consecutive layers so the scheduler can
prefetch the next layer's parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from j3dsim import layout
from j3dsim.config import HardwareConfig
from j3dsim.ir import GraphIR
from j3dsim.layout import (
    ExecLayer,
    Geometry,
    MapError,
    TemplateParams,
    align,
    cdiv,
    ceil8,
    conv_attrs,
    macs_per_out,
)


@dataclass
class LayerPlan:
    layer_id: str
    step: int
    kind: str
    tp: TemplateParams
    buffers: dict[str, tuple[int, int]]  # name -> (sram offset, nbytes)
    maskable: bool
    weight_bank: int  # -1 when the layer has no parameters
    uses_both_banks: bool
    prefetchable: bool
    bytes_in: int
    bytes_param: int
    bytes_out: int
    bytes_fill: int
    issues: list[int]
    macs: int
    n_param_loads: int = 0
    w_l2: tuple[int, int] = (-1, 0)  # weight blob (offset, size) in L2

    @property
    def bytes_moved(self) -> int:
        return self.bytes_in + self.bytes_param + self.bytes_out + self.bytes_fill

    def to_json(self):
        d = dict(self.__dict__)
        d["tp"] = self.tp.to_json()
        d["buffers"] = {k: list(v) for k, v in self.buffers.items()}
        d["w_l2"] = list(self.w_l2)
        return d

    @staticmethod
    def from_json(d) -> "LayerPlan":
        d = dict(d)
        d["tp"] = TemplateParams.from_json(d["tp"])
        d["buffers"] = {k: tuple(v) for k, v in d["buffers"].items()}
        d["w_l2"] = tuple(d["w_l2"])
        return LayerPlan(**d)


@dataclass
class MappingPlan:
    layers: list[LayerPlan]
    l2_tensors: dict[str, dict]  # name -> offset/shape/pads/lifetime
    regions: dict[str, tuple[int, int]]
    l2_used: int

    @property
    def total_bytes_moved(self) -> int:
        return sum(lp.bytes_moved for lp in self.layers)

    def layer(self, layer_id: str) -> LayerPlan:
        for lp in self.layers:
            if lp.layer_id == layer_id:
                return lp
        raise KeyError(layer_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "layers": [lp.to_json() for lp in self.layers],
                "l2_tensors": self.l2_tensors,
                "regions": {k: list(v) for k, v in self.regions.items()},
                "l2_used": self.l2_used,
            },
            indent=2,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "MappingPlan":
        d = json.loads(text)
        return MappingPlan(
            layers=[LayerPlan.from_json(x) for x in d["layers"]],
            l2_tensors=d["l2_tensors"],
            regions={k: tuple(v) for k, v in d["regions"].items()},
            l2_used=d["l2_used"],
        )


# ----------------------------------------------------------- weight blobs

def weight_chunks(g: GraphIR, el: ExecLayer, tp: TemplateParams,
                  cfg: HardwareConfig) -> list[dict]:
    """Per weight-tile slices of the layer's L2 parameter blob, offsets
    relative to the blob start; weights first, then all biases. Each
    entry covers one output-channel segment/block and lists its
    reduction chunks (a single chunk unless the channel template splits
    the input channels to fit a weight bank)."""
    if el.kind not in layout.CONV_KINDS:
        return []
    kh, kw, _, _, _, _, cin, cout, _, _ = conv_attrs(g, el)
    dw = el.kind == "DepthwiseConv2D"
    entries = []
    if tp.template == "spatial":
        pb_w = kh * kw if dw else cin * kh * kw
        segs = [(c0, min(tp.ct, cout - c0)) for c0 in range(0, cout, tp.ct)]
        sizes = [(ceil8(cs) * pb_w, 4 * ceil8(cs)) for _, cs in segs]
        red = [[(0, cin)]] * len(segs)
    else:
        lanes = cfg.ncb_per_cluster * cfg.pes_per_ncb
        segs = [(b0, min(lanes, cout - b0)) for b0 in range(0, cout, lanes)]
        per_out = kh * kw if dw else cin * kh * kw
        sizes = [(per_out * bs, 4 * bs) for _, bs in segs]
        if el.kind in ("Conv2D", "Dense"):
            red = [layout.cin_chunks(cin, kh, kw, cfg)] * len(segs)
        else:
            red = [[(0, cin)]] * len(segs)
    w_total = sum(w for w, _ in sizes)
    w_off = 0
    b_off = w_total
    for (c0, cs), (wsz, bsz), chs in zip(segs, sizes, red):
        sub = []
        ch_off = w_off
        for ci0, cisz in chs:
            ch_sz = wsz if len(chs) == 1 else cisz * kh * kw * cs
            sub.append({"ci0": ci0, "cisize": cisz,
                        "w_off": ch_off, "w_size": ch_sz})
            ch_off += ch_sz
        entries.append({"c0": c0, "csize": cs, "w_off": w_off, "w_size": wsz,
                        "b_off": b_off, "b_size": bsz, "chunks": sub})
        w_off += wsz
        b_off += bsz
    return entries


def blob_size(g, el, tp, cfg) -> int:
    ch = weight_chunks(g, el, tp, cfg)
    if not ch:
        return 0
    last = ch[-1]
    return last["b_off"] + last["b_size"]


# ------------------------------------------------------------- planning

def _choose(g, el, cfg, l2, exhaustive=False) -> tuple[TemplateParams, Geometry, bool]:
    best = None
    reasons = []
    for tp in layout.candidate_templates(g, el, cfg, exhaustive=exhaustive):
        geo = layout.layer_geometry(g, el, tp, cfg, l2)
        if geo is None:
            continue
        fits, maskable = layout.buffers_fit(geo.buffers, geo.uses_both_banks, cfg)
        if not fits:
            reasons.append(
                f"{tp.template}(gt={tp.gt},ct={tp.ct},rt={tp.rt}): buffers "
                f"{sum(geo.buffers.values())} B exceed NCB SRAM"
            )
            continue
        key = (geo.bytes_moved, max(geo.issues), not maskable,
               tp.order != "w_outer", tp.template, tp.gt, tp.ct, tp.rt)
        if best is None or key < best[0]:
            best = (key, tp, geo, maskable)
    if best is None:
        detail = reasons[-1] if reasons else "no applicable template"
        raise MapError(f"layer {el.id!r}: cannot map ({detail})")
    return best[1], best[2], best[3]


def _sram_offsets(geo: Geometry, maskable: bool, weight_bank: int,
                  cfg: HardwareConfig) -> dict[str, tuple[int, int]]:
    bank = cfg.ncb_bank_bytes
    nb = cfg.ncb_sram_banks
    out: dict[str, tuple[int, int]] = {}
    io_names = [k for k in sorted(geo.buffers) if k not in ("w", "bias")]
    off = 0
    for k in io_names:
        sz = geo.buffers[k]
        if sz:
            out[k] = (off, sz)
            off += sz
    bsz = geo.buffers.get("bias", 0)
    if bsz:
        out["bias"] = (off, bsz)
        off += bsz
        if geo.uses_both_banks:
            out["bias2"] = (off, bsz)
            off += bsz
    wsz = geo.buffers.get("w", 0)
    if wsz:
        if maskable:
            if geo.uses_both_banks:
                out["w"] = ((nb - 2) * bank, wsz)
                out["w2"] = ((nb - 1) * bank, wsz)
            else:
                out["w"] = (weight_bank * bank, wsz)
        else:
            out["w"] = (off, wsz)
            off += wsz
    return out


def plan_mapping(g: GraphIR, cfg: HardwareConfig,
                 exhaustive: bool = False) -> MappingPlan:
    """Plan the whole graph. Raises MapError naming the first layer that
    cannot be placed."""
    steps = layout.build_exec_layers(g)
    l2 = layout.build_l2_tensors(g, steps)
    nb, bank = cfg.ncb_sram_banks, cfg.ncb_bank_bytes

    layers: list[LayerPlan] = []
    last_bank: int | None = None
    blob_at: dict[str, tuple[int, int]] = {}
    w_cursor = 0
    for el in steps:
        tp, geo, maskable = _choose(g, el, cfg, l2, exhaustive=exhaustive)
        has_w = el.kind in layout.CONV_KINDS
        weight_bank = -1
        if has_w and maskable:
            if geo.uses_both_banks:
                weight_bank = nb - 2
                last_bank = None
            else:
                weight_bank = nb - 1 if last_bank != nb - 1 else nb - 2
                last_bank = weight_bank
        elif has_w:
            last_bank = None
        buffers = _sram_offsets(geo, maskable, weight_bank, cfg)
        bsz = blob_size(g, el, tp, cfg)
        w_l2 = (-1, 0)
        if bsz:
            w_l2 = (w_cursor, bsz)
            w_cursor += align(bsz)
        prefetchable = (
            has_w and maskable and not geo.uses_both_banks
            and geo.n_param_loads == 1 and el.kind != "Dense"
        )
        layers.append(LayerPlan(
            layer_id=el.id, step=el.step, kind=el.kind, tp=tp,
            buffers=buffers, maskable=maskable, weight_bank=weight_bank,
            uses_both_banks=geo.uses_both_banks, prefetchable=prefetchable,
            bytes_in=geo.bytes_in, bytes_param=geo.bytes_param,
            bytes_out=geo.bytes_out, bytes_fill=geo.bytes_fill,
            issues=geo.issues, macs=geo.macs,
            n_param_loads=min(geo.n_param_loads, 10**6), w_l2=w_l2))

    # ------------------------------------------------ L2 allocation
    regions: dict[str, tuple[int, int]] = {"weights": (0, w_cursor)}
    n_steps = len(steps)
    live: dict[str, tuple[int, int]] = {}
    for name, t in l2.items():
        start = -1 if name in g.inputs else None
        end = -2
        for el in steps:
            if el.out_name == name and start is None:
                start = el.step
            if name in el.in_names:
                end = max(end, el.step)
        if name in g.outputs:
            end = n_steps
        if start is None:
            start = 0
        live[name] = (start, max(end, start))

    free: list[tuple[int, int]] = [(align(w_cursor), cfg.l2_bytes)]

    def take(size: int, what: str) -> int:
        size = align(size)
        for i, (lo, hi) in enumerate(free):
            if hi - lo >= size:
                free[i] = (lo + size, hi)
                if free[i][0] == free[i][1]:
                    free.pop(i)
                return lo
        raise MapError(
            f"L2 capacity exceeded placing {what} ({size} bytes needed, "
            f"largest free block "
            f"{max((hi - lo for lo, hi in free), default=0)} bytes)")

    def release(off: int, size: int) -> None:
        size = align(size)
        free.append((off, off + size))
        free.sort()
        merged: list[tuple[int, int]] = []
        for lo, hi in free:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
            else:
                merged.append((lo, hi))
        free[:] = merged

    staging_in = take(sum(l2[n].nbytes for n in g.inputs), "staging_in")
    regions["staging_in"] = (staging_in, sum(l2[n].nbytes for n in g.inputs))
    by_start: dict[int, list[str]] = {}
    by_end: dict[int, list[str]] = {}
    for name, (s, e) in live.items():
        by_start.setdefault(s, []).append(name)
        by_end.setdefault(e, []).append(name)
    for step in range(-1, n_steps + 1):
        for name in sorted(by_start.get(step, [])):
            l2[name].offset = take(l2[name].nbytes, f"tensor {name!r}")
        if step == -1:
            # input staging is consumed by the pre-launch DMA
            release(*regions["staging_in"])
        for name in sorted(by_end.get(step, [])):
            if name not in g.outputs:
                release(l2[name].offset, l2[name].nbytes)
    out_bytes = sum(l2[n].shape[1] * l2[n].shape[2] * l2[n].shape[3]
                    for n in g.outputs)
    regions["staging_out"] = (take(out_bytes, "staging_out"), out_bytes)

    l2_used = max(
        [off + sz for off, sz in regions.values()]
        + [l2[n].offset + l2[n].nbytes for n in l2]
    )
    l2_tensors = {
        name: {
            "offset": t.offset,
            "shape": list(t.shape),
            "pad_h": t.pad_h,
            "pad_w": t.pad_w,
            "nbytes": t.nbytes,
            "live": list(live[name]),
        }
        for name, t in l2.items()
    }
    return MappingPlan(layers, l2_tensors, regions, l2_used)


# ------------------------------------------------------------- validation

def check_fit(plan: MappingPlan, cfg: HardwareConfig) -> dict:
    """Re-validate a plan's placements. Returns {'ok', 'violations',
    'metrics'}; violations name the offending layer/tensor."""
    violations: list[str] = []
    nb, bank = cfg.ncb_sram_banks, cfg.ncb_bank_bytes
    for lp in plan.layers:
        spans = sorted((off, off + sz, name)
                       for name, (off, sz) in lp.buffers.items() if sz)
        for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
            if b0 < a1:
                violations.append(
                    f"layer {lp.layer_id!r}: SRAM buffers {an!r} and {bn!r} overlap")
        for name, (off, sz) in lp.buffers.items():
            if sz and off + sz > cfg.ncb_sram_bytes:
                violations.append(
                    f"layer {lp.layer_id!r}: buffer {name!r} exceeds NCB SRAM")
        if lp.maskable:
            wb = lp.weight_bank if lp.weight_bank >= 0 else nb - 1
            for name, (off, sz) in lp.buffers.items():
                if not sz:
                    continue
                if name in ("w", "w2"):
                    lo = (nb - 2) * bank if lp.uses_both_banks else wb * bank
                    if off < lo:
                        violations.append(
                            f"layer {lp.layer_id!r}: weight buffer {name!r} "
                            f"below its weight bank")
                elif off + sz > (nb - 2) * bank:
                    violations.append(
                        f"layer {lp.layer_id!r}: io buffer {name!r} reaches "
                        f"into the weight banks")
    spans = []
    for name, t in plan.l2_tensors.items():
        if t["offset"] < 0 or t["offset"] + t["nbytes"] > cfg.l2_bytes:
            violations.append(f"tensor {name!r}: outside L2")
        spans.append((t["offset"], t["offset"] + t["nbytes"],
                      t["live"][0], t["live"][1], name))
    for i, (a0, a1, as_, ae, an) in enumerate(spans):
        for b0, b1, bs, be, bn in spans[i + 1:]:
            if a0 < b1 and b0 < a1 and as_ <= be and bs <= ae:
                violations.append(
                    f"tensors {an!r} and {bn!r}: overlapping L2 placement "
                    f"with overlapping lifetimes")
    woff, wsz = plan.regions["weights"]
    for a0, a1, _, _, an in spans:
        if a0 < woff + wsz and woff < a1:
            violations.append(f"tensor {an!r}: overlaps the weight region")

    peak = cfg.num_clusters * cfg.ncb_per_cluster * cfg.pes_per_ncb
    metrics = {
        "l2_used": plan.l2_used,
        "l2_occupancy": plan.l2_used / cfg.l2_bytes,
        "total_bytes_moved": plan.total_bytes_moved,
        "per_layer": {
            lp.layer_id: {
                "template": lp.tp.template,
                "bytes_moved": lp.bytes_moved,
                "sram_occupancy": sum(sz for _, sz in lp.buffers.values())
                / cfg.ncb_sram_bytes,
                "pe_utilization": lp.macs / (max(lp.issues) * peak)
                if lp.macs else 0.0,
            }
            for lp in plan.layers
        },
    }
    return {"ok": not violations, "violations": violations, "metrics": metrics}


def estimate_cycles(plan: MappingPlan, cfg: HardwareConfig,
                    overlap: bool = True) -> int:
    """Coarse makespan: per layer the worst-cluster issue count plus the
    serialized engine time of transfers that cannot hide behind compute."""
    total = 0
    engine_bpc = cfg.dmpa_width_bits // 8
    prev_prefetched = False
    for i, lp in enumerate(plan.layers):
        compute = max(lp.issues)
        serial = lp.bytes_in + lp.bytes_fill
        param = lp.bytes_param
        if overlap and prev_prefetched:
            param = 0
        elif overlap and lp.uses_both_banks and lp.n_param_loads > 1:
            # only the first block load is exposed; the rest ping-pong
            # behind compute
            param = cdiv(lp.bytes_param, lp.n_param_loads)
        total += compute + cdiv(serial + param, engine_bpc)
        nxt = plan.layers[i + 1] if i + 1 < len(plan.layers) else None
        prev_prefetched = bool(
            overlap and nxt is not None and nxt.prefetchable and lp.maskable
            and not lp.uses_both_banks
            and (nxt.weight_bank != lp.weight_bank or lp.weight_bank < 0)
        )
    return total


# ------------------------------------------------------------ brute force

def brute_force_cost(g: GraphIR, el: ExecLayer, tp: TemplateParams,
                     cfg: HardwareConfig, l2) -> tuple | None:
    """Independent per-layer cost: walk the tile list and add up every
    transfer directly. Returns (bytes_moved, worst_issues) or None."""
    geo = layout.layer_geometry(g, el, tp, cfg, l2)
    if geo is None:
        return None
    fits, _ = layout.buffers_fit(geo.buffers, geo.uses_both_banks, cfg)
    if not fits:
        return None
    kh, kw, sh, sw, ph, pw, cin, cout, oh, ow = conv_attrs(g, el)
    mpo = macs_per_out(g, el)
    ncb, pes = cfg.ncb_per_cluster, cfg.pes_per_ncb
    total = l2[el.out_name].fill_bytes()
    for t in layout.iter_tiles(g, el, tp, cfg):
        if tp.template == "spatial":
            c0, cs = t.cseg
            dw = el.kind == "DepthwiseConv2D"
            if t.load_in:
                total += t.npx * (ceil8(cs) * kh * kw if dw else cin * kh * kw)
            if t.load_w:
                pb_w = kh * kw if dw else cin * kh * kw
                total += ncb * (ceil8(cs) * pb_w + 4 * ceil8(cs))
            total += t.npx * cs
        elif tp.template == "channel":
            b0, bs = t.block
            nn = bs // pes
            if el.kind == "Dense":
                total += nn * cin + (cin * bs + 4 * bs if t.load_w else 0) + bs
            elif el.kind == "GlobalAvgPool":
                ih, iw = g.tensors[el.in_names[0]].shape[2:]
                total += nn * ih * iw * pes + bs
            else:
                hin = (t.nrows - 1) * sh + kh
                win = (ow - 1) * sw + kw
                if t.load_in:
                    if el.kind == "Conv2D":
                        total += ncb * cin * hin * win
                    else:
                        total += nn * hin * win * pes
                if t.load_w:
                    total += mpo * bs + 4 * bs
                total += bs * t.nrows * ow
        else:
            _, c, h, w = g.tensors[el.out_name].shape
            total += h * w * (len(el.in_names) + 1)
    return (total, max(geo.issues))


def brute_force_plan(g: GraphIR, cfg: HardwareConfig) -> dict[str, tuple]:
    """Exhaustive per-layer optimum over the full tile lattice, with
    independently computed byte totals. Returns layer_id -> (bytes,
    issues)."""
    steps = layout.build_exec_layers(g)
    l2 = layout.build_l2_tensors(g, steps)
    best: dict[str, tuple] = {}
    for el in steps:
        b = None
        for tp in layout.candidate_templates(g, el, cfg, exhaustive=True):
            cost = brute_force_cost(g, el, tp, cfg, l2)
            if cost is not None and (b is None or cost < b):
                b = cost
        if b is None:
            raise MapError(f"layer {el.id!r}: no feasible mapping")
        best[el.id] = b
    return best
