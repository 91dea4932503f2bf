"""Neural-network graph IR: tensors, layers, JSON ingestion, shape
inference and MAC accounting.

Graphs are NCHW, batch 1 for deployment. Weight payloads live in a sidecar
binary container (see container.py), not inline JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

LAYER_KINDS = (
    "Conv2D",
    "DepthwiseConv2D",
    "Dense",
    "ReLU",
    "ReLU6",
    "Add",
    "MaxPool",
    "AvgPool",
    "GlobalAvgPool",
    "UpsampleNearest",
    "Concat",
)

DTYPES = ("float32", "int8", "uint8", "int32")


class IRError(ValueError):
    pass


@dataclass
class QuantParams:
    """Per-tensor quantization parameters.

    requant carries the fixed-point multiplier for the tensor as the output
    of its producing layer: y = rnd(acc * m0 * 2^-(30+shift)) + zero_point.
    """

    scale: float
    zero_point: int
    bitwidth: int = 8
    signed: bool = False
    requant: dict | None = None  # {"m0": int, "shift": int}

    def to_json(self) -> dict:
        d = {
            "scale": self.scale,
            "zero_point": self.zero_point,
            "bitwidth": self.bitwidth,
            "signed": self.signed,
        }
        if self.requant is not None:
            d["requant"] = dict(self.requant)
        return d

    @staticmethod
    def from_json(d: dict) -> "QuantParams":
        unknown = set(d) - {"scale", "zero_point", "bitwidth", "signed", "requant"}
        if unknown:
            raise IRError(f"quant: unknown fields {sorted(unknown)}")
        return QuantParams(
            scale=float(d["scale"]),
            zero_point=int(d["zero_point"]),
            bitwidth=int(d.get("bitwidth", 8)),
            signed=bool(d.get("signed", False)),
            requant=dict(d["requant"]) if d.get("requant") is not None else None,
        )


@dataclass
class TensorSpec:
    name: str
    shape: tuple[int, ...] | None = None
    dtype: str = "float32"
    quant: QuantParams | None = None


@dataclass
class LayerNode:
    id: str
    kind: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict = field(default_factory=dict)


@dataclass
class GraphIR:
    tensors: dict[str, TensorSpec]
    layers: list[LayerNode]
    inputs: list[str]
    outputs: list[str]
    data: dict[str, np.ndarray] = field(default_factory=dict)

    def producer_of(self, tensor: str) -> LayerNode | None:
        for layer in self.layers:
            if tensor in layer.outputs:
                return layer
        return None

    def consumers_of(self, tensor: str) -> list[LayerNode]:
        return [l for l in self.layers if tensor in l.inputs]


def validate_graph(g: GraphIR) -> None:
    """Raise IRError on structural problems (dangling refs, cycles,
    duplicate producers, bad attrs)."""
    for name in g.inputs + g.outputs:
        if name not in g.tensors:
            raise IRError(f"graph references undefined tensor {name!r}")
    producers: dict[str, str] = {}
    seen_ids: set[str] = set()
    for layer in g.layers:
        if layer.id in seen_ids:
            raise IRError(f"duplicate layer id {layer.id!r}")
        seen_ids.add(layer.id)
        if layer.kind not in LAYER_KINDS:
            raise IRError(f"layer {layer.id!r}: unknown kind {layer.kind!r}")
        for name in layer.inputs + layer.outputs:
            if name not in g.tensors:
                raise IRError(f"layer {layer.id!r} references undefined tensor {name!r}")
        for name in layer.outputs:
            if name in producers:
                raise IRError(
                    f"tensor {name!r} produced by both {producers[name]!r} and {layer.id!r}"
                )
            if name in g.inputs or name in g.data:
                raise IRError(f"tensor {name!r} is both an input/constant and a layer output")
            producers[name] = layer.id
        _check_attrs(layer)
    for layer in g.layers:
        for name in layer.inputs:
            if name not in producers and name not in g.inputs and name not in g.data:
                raise IRError(
                    f"layer {layer.id!r}: input tensor {name!r} has no producer "
                    "and is not a graph input or constant"
                )
    topological_order(g)  # raises on cycles


_CONV_KINDS = ("Conv2D", "DepthwiseConv2D")
_POOL_KINDS = ("MaxPool", "AvgPool")


def _check_attrs(layer: LayerNode) -> None:
    a = layer.attrs
    if layer.kind in _CONV_KINDS + _POOL_KINDS:
        for key in ("kernel", "stride"):
            if key not in a or len(a[key]) != 2:
                raise IRError(f"layer {layer.id!r}: attr {key!r} must be a (h, w) pair")
        pad = a.get("padding", [0, 0])
        if len(pad) != 2 or any(p < 0 for p in pad):
            raise IRError(f"layer {layer.id!r}: padding must be a non-negative (h, w) pair")
    if layer.kind == "UpsampleNearest":
        if int(a.get("scale", 0)) < 1:
            raise IRError(f"layer {layer.id!r}: scale must be a positive integer")
    if layer.kind == "Concat" and int(a.get("axis", 1)) != 1:
        raise IRError(f"layer {layer.id!r}: only channel concat (axis=1) is supported")
    n_in = {"Add": 2, "ReLU": 1, "ReLU6": 1, "MaxPool": 1, "AvgPool": 1,
            "GlobalAvgPool": 1, "UpsampleNearest": 1}.get(layer.kind)
    if n_in is not None and len(layer.inputs) != n_in:
        raise IRError(f"layer {layer.id!r}: {layer.kind} expects {n_in} input(s)")
    if layer.kind in ("Conv2D", "DepthwiseConv2D", "Dense") and len(layer.inputs) not in (2, 3):
        raise IRError(f"layer {layer.id!r}: {layer.kind} expects (x, w[, bias]) inputs")
    if len(layer.outputs) != 1:
        raise IRError(f"layer {layer.id!r}: exactly one output expected")


def topological_order(g: GraphIR) -> list[LayerNode]:
    """Layers in dependency order; raises IRError if the graph has a cycle."""
    producer = {t: l for l in g.layers for t in l.outputs}
    indeg = {l.id: 0 for l in g.layers}
    succ: dict[str, list[str]] = {l.id: [] for l in g.layers}
    by_id = {l.id: l for l in g.layers}
    for layer in g.layers:
        for t in layer.inputs:
            p = producer.get(t)
            if p is not None and p.id != layer.id:
                succ[p.id].append(layer.id)
                indeg[layer.id] += 1
    ready = [l.id for l in g.layers if indeg[l.id] == 0]
    order: list[LayerNode] = []
    while ready:
        lid = ready.pop(0)
        order.append(by_id[lid])
        for s in succ[lid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    if len(order) != len(g.layers):
        stuck = sorted(set(by_id) - {l.id for l in order})
        raise IRError(f"cycle detected involving layers {stuck}")
    return order


# ---------------------------------------------------------------- JSON I/O

def export_json(g: GraphIR) -> str:
    doc = {
        "tensors": [
            {
                "name": t.name,
                "shape": list(t.shape) if t.shape is not None else None,
                "dtype": t.dtype,
                "quant": t.quant.to_json() if t.quant else None,
            }
            for t in g.tensors.values()
        ],
        "layers": [
            {
                "id": l.id,
                "kind": l.kind,
                "attrs": l.attrs,
                "inputs": l.inputs,
                "outputs": l.outputs,
            }
            for l in g.layers
        ],
        "inputs": g.inputs,
        "outputs": g.outputs,
    }
    return json.dumps(doc, indent=2) + "\n"


_TENSOR_KEYS = {"name", "shape", "dtype", "quant"}
_LAYER_KEYS = {"id", "kind", "attrs", "inputs", "outputs"}


def import_json(text: str, weights: dict[str, np.ndarray] | None = None) -> GraphIR:
    """Parse and validate an IR document; weight payloads are resolved from
    the companion container mapping."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IRError(f"malformed IR document: {exc}") from exc
    for key in ("tensors", "layers", "inputs", "outputs"):
        if key not in doc:
            raise IRError(f"IR document missing {key!r}")
    tensors: dict[str, TensorSpec] = {}
    for td in doc["tensors"]:
        unknown = set(td) - _TENSOR_KEYS
        if unknown:
            raise IRError(f"tensor {td.get('name')!r}: unknown fields {sorted(unknown)}")
        name = td["name"]
        if name in tensors:
            raise IRError(f"duplicate tensor {name!r}")
        dtype = td.get("dtype", "float32")
        if dtype not in DTYPES:
            raise IRError(f"tensor {name!r}: unknown dtype {dtype!r}")
        shape = tuple(int(x) for x in td["shape"]) if td.get("shape") is not None else None
        if shape is not None and any(x < 1 for x in shape):
            raise IRError(f"tensor {name!r}: extents must be >= 1")
        quant = QuantParams.from_json(td["quant"]) if td.get("quant") else None
        tensors[name] = TensorSpec(name, shape, dtype, quant)
    layers = []
    for ld in doc["layers"]:
        unknown = set(ld) - _LAYER_KEYS
        if unknown:
            raise IRError(f"layer {ld.get('id')!r}: unknown fields {sorted(unknown)}")
        layers.append(
            LayerNode(
                id=str(ld["id"]),
                kind=ld["kind"],
                inputs=list(ld["inputs"]),
                outputs=list(ld["outputs"]),
                attrs=dict(ld.get("attrs", {})),
            )
        )
    g = GraphIR(
        tensors=tensors,
        layers=layers,
        inputs=list(doc["inputs"]),
        outputs=list(doc["outputs"]),
        data=dict(weights) if weights else {},
    )
    validate_graph(g)
    return g


# ---------------------------------------------------------- shape inference

def _conv_hw(h: int, w: int, kernel, stride, padding) -> tuple[int, int]:
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise IRError(f"spatial collapse: {h}x{w} with k={kernel} s={stride} p={padding}")
    return oh, ow


def _infer_layer(g: GraphIR, layer: LayerNode) -> tuple[int, int, int, int]:
    shp = lambda name: g.tensors[name].shape
    x = shp(layer.inputs[0])
    if x is None:
        raise IRError(f"layer {layer.id!r}: input shape unresolved")
    a = layer.attrs
    if layer.kind == "Conv2D":
        w = shp(layer.inputs[1])
        n, c, h, ww = x
        cout, cin_g, kh, kw = w
        groups = int(a.get("groups", 1))
        if cin_g * groups != c:
            raise IRError(
                f"layer {layer.id!r}: weight expects {cin_g * groups} input channels, got {c}"
            )
        if [kh, kw] != list(a["kernel"]):
            raise IRError(f"layer {layer.id!r}: kernel attr disagrees with weight shape")
        oh, ow = _conv_hw(h, ww, a["kernel"], a["stride"], a.get("padding", [0, 0]))
        return (n, cout, oh, ow)
    if layer.kind == "DepthwiseConv2D":
        w = shp(layer.inputs[1])
        n, c, h, ww = x
        cout, one, kh, kw = w
        if cout != c or one != 1:
            raise IRError(f"layer {layer.id!r}: depthwise weight must be (C,1,kh,kw) with C={c}")
        oh, ow = _conv_hw(h, ww, a["kernel"], a["stride"], a.get("padding", [0, 0]))
        return (n, c, oh, ow)
    if layer.kind == "Dense":
        w = shp(layer.inputs[1])
        n, c, h, ww = x
        if (h, ww) != (1, 1):
            raise IRError(f"layer {layer.id!r}: Dense expects 1x1 spatial input, got {h}x{ww}")
        cout, cin = w
        if cin != c:
            raise IRError(f"layer {layer.id!r}: weight expects {cin} inputs, got {c}")
        return (n, cout, 1, 1)
    if layer.kind in ("ReLU", "ReLU6", "UpsampleNearest"):
        n, c, h, w = x
        if layer.kind == "UpsampleNearest":
            s = int(a["scale"])
            return (n, c, h * s, w * s)
        return x
    if layer.kind == "Add":
        y = shp(layer.inputs[1])
        if x != y:
            raise IRError(f"layer {layer.id!r}: Add operands {x} vs {y} mismatch")
        return x
    if layer.kind in _POOL_KINDS:
        n, c, h, w = x
        oh, ow = _conv_hw(h, w, a["kernel"], a["stride"], a.get("padding", [0, 0]))
        return (n, c, oh, ow)
    if layer.kind == "GlobalAvgPool":
        n, c, _, _ = x
        return (n, c, 1, 1)
    if layer.kind == "Concat":
        n, c, h, w = x
        for other in layer.inputs[1:]:
            n2, c2, h2, w2 = shp(other)
            if (n2, h2, w2) != (n, h, w):
                raise IRError(f"layer {layer.id!r}: concat spatial mismatch")
            c += c2
        return (n, c, h, w)
    raise IRError(f"layer {layer.id!r}: cannot infer shape for {layer.kind!r}")


def infer_shapes(g: GraphIR) -> GraphIR:
    """Resolve all tensor shapes. Idempotent; raises IRError naming the
    offending layer on any mismatch."""
    validate_graph(g)
    for name in g.inputs:
        if g.tensors[name].shape is None:
            raise IRError(f"graph input {name!r} has no shape")
    tensors = {n: replace(t) for n, t in g.tensors.items()}
    out = GraphIR(tensors, g.layers, g.inputs, g.outputs, g.data)
    for name, arr in g.data.items():
        spec = tensors[name]
        if spec.shape is not None and tuple(spec.shape) != tuple(arr.shape):
            raise IRError(f"tensor {name!r}: declared shape {spec.shape} != data {arr.shape}")
        spec.shape = tuple(arr.shape)
    for layer in topological_order(out):
        shape = _infer_layer(out, layer)
        spec = tensors[layer.outputs[0]]
        if spec.shape is not None and tuple(spec.shape) != shape:
            raise IRError(
                f"layer {layer.id!r}: inferred {shape} but tensor declares {spec.shape}"
            )
        spec.shape = shape
    return out


# ------------------------------------------------------------ MAC counting

def layer_macs(g: GraphIR, layer: LayerNode) -> int:
    """Multiplies only: conv/dense layers count, everything else is 0."""
    if layer.kind not in ("Conv2D", "DepthwiseConv2D", "Dense"):
        return 0
    out = g.tensors[layer.outputs[0]].shape
    if out is None:
        raise IRError(f"layer {layer.id!r}: shapes not inferred")
    n, cout, oh, ow = out
    if layer.kind == "Dense":
        cin = g.tensors[layer.inputs[1]].shape[1]
        return n * cout * cin
    w = g.tensors[layer.inputs[1]].shape
    _, cin_g, kh, kw = w
    return n * oh * ow * cout * cin_g * kh * kw


def mac_count(g: GraphIR) -> tuple[dict[str, int], int]:
    """Per-layer MACs and the total."""
    per_layer = {l.id: layer_macs(g, l) for l in g.layers}
    return per_layer, sum(per_layer.values())
