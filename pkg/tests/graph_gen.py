"""Random small-graph generator shared by functional tests.

Graphs stay within the backend's supported operator set; channel counts
are multiples of 8 except for the first convolution's input.
"""

from __future__ import annotations

import numpy as np

from j3dsim import ir


def _conv_out(h, w, k, s, p):
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def random_graph(seed: int) -> ir.GraphIR:
    rng = np.random.default_rng(seed)
    cin = int(rng.choice([3, 8, 16]))
    h = int(rng.integers(6, 20))
    w = int(rng.integers(6, 20))
    tensors = {"x": ir.TensorSpec("x", (1, cin, h, w))}
    layers: list[ir.LayerNode] = []
    data: dict[str, np.ndarray] = {}
    cur, c = "x", cin
    nid = 0

    def fresh(cc, hh, ww):
        nonlocal nid
        nid += 1
        name = f"t{nid}"
        tensors[name] = ir.TensorSpec(name, (1, cc, hh, ww))
        return name

    def maybe_act(src, cc, hh, ww):
        roll = rng.random()
        if roll < 0.4:
            return src
        kind = "ReLU" if roll < 0.8 else "ReLU6"
        out = fresh(cc, hh, ww)
        layers.append(ir.LayerNode(f"act{nid}", kind, [src], [out]))
        return out

    n_blocks = int(rng.integers(2, 6))
    for _ in range(n_blocks):
        if h < 3 or w < 3:
            break
        choice = rng.random()
        if choice < 0.45:  # conv
            k = int(rng.choice([1, 3]))
            s = int(rng.choice([1, 2])) if min(h, w) > 4 else 1
            p = k // 2
            co = int(rng.choice([8, 16, 24, 32]))
            oh, ow = _conv_out(h, w, k, s, p)
            wn, bn = f"w{nid}", f"b{nid}"
            tensors[wn] = ir.TensorSpec(wn, (co, c, k, k))
            data[wn] = (rng.standard_normal((co, c, k, k)) * 0.3).astype(np.float32)
            if rng.random() < 0.8:
                tensors[bn] = ir.TensorSpec(bn, (co,))
                data[bn] = (rng.standard_normal(co) * 0.1).astype(np.float32)
                ins = [cur, wn, bn]
            else:
                ins = [cur, wn]
            out = fresh(co, oh, ow)
            layers.append(ir.LayerNode(f"conv{nid}", "Conv2D", ins, [out],
                                       {"kernel": [k, k], "stride": [s, s],
                                        "padding": [p, p]}))
            cur, c, h, w = maybe_act(out, co, oh, ow), co, oh, ow
        elif choice < 0.65 and c % 8 == 0:  # depthwise
            k, s, p = 3, int(rng.choice([1, 2])), 1
            oh, ow = _conv_out(h, w, k, s, p)
            wn, bn = f"w{nid}", f"b{nid}"
            tensors[wn] = ir.TensorSpec(wn, (c, 1, k, k))
            data[wn] = (rng.standard_normal((c, 1, k, k)) * 0.3).astype(np.float32)
            tensors[bn] = ir.TensorSpec(bn, (c,))
            data[bn] = (rng.standard_normal(c) * 0.1).astype(np.float32)
            out = fresh(c, oh, ow)
            layers.append(ir.LayerNode(f"dw{nid}", "DepthwiseConv2D",
                                       [cur, wn, bn], [out],
                                       {"kernel": [k, k], "stride": [s, s],
                                        "padding": [p, p]}))
            cur, h, w = maybe_act(out, c, oh, ow), oh, ow
        elif choice < 0.8 and c % 8 == 0 and min(h, w) >= 3:  # pool
            kind = "MaxPool" if rng.random() < 0.5 else "AvgPool"
            k, s = 2, 2
            oh, ow = _conv_out(h, w, k, s, 0)
            out = fresh(c, oh, ow)
            layers.append(ir.LayerNode(f"pool{nid}", kind, [cur], [out],
                                       {"kernel": [k, k], "stride": [s, s],
                                        "padding": [0, 0]}))
            cur, h, w = out, oh, ow
        else:  # residual add around a 1x1 conv
            wn = f"w{nid}"
            tensors[wn] = ir.TensorSpec(wn, (c, c, 1, 1))
            data[wn] = (rng.standard_normal((c, c, 1, 1)) * 0.3).astype(np.float32)
            mid = fresh(c, h, w)
            layers.append(ir.LayerNode(f"conv{nid}", "Conv2D", [cur, wn], [mid],
                                       {"kernel": [1, 1], "stride": [1, 1],
                                        "padding": [0, 0]}))
            out = fresh(c, h, w)
            layers.append(ir.LayerNode(f"add{nid}", "Add", [cur, mid], [out]))
            cur = maybe_act(out, c, h, w)

    if c % 8 == 0 and rng.random() < 0.3:
        pooled = fresh(c, 1, 1)
        layers.append(ir.LayerNode("gap", "GlobalAvgPool", [cur], [pooled]))
        co = int(rng.choice([8, 16, 40]))
        tensors["fw"] = ir.TensorSpec("fw", (co, c))
        data["fw"] = (rng.standard_normal((co, c)) * 0.2).astype(np.float32)
        tensors["fb"] = ir.TensorSpec("fb", (co,))
        data["fb"] = (rng.standard_normal(co) * 0.1).astype(np.float32)
        out = fresh(co, 1, 1)
        layers.append(ir.LayerNode("fc", "Dense", [pooled, "fw", "fb"], [out]))
        cur = out

    g = ir.GraphIR(tensors, layers, ["x"], [cur])
    g.data.update(data)
    ir.validate_graph(g)
    return g
