"""ONNX -> accelerator IR conversion.

Produces the IR JSON document plus a weight dict whose payload bytes are
exactly the ONNX initializer bytes (no re-encoding). Anything the target
IR cannot express fails loudly, naming the operator.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Graph, Node, OnnxError, Tensor, load_model


class ConvertError(ValueError):
    pass


# ops removed in a pre-pass: value providers and pure renames
_ALIAS_OPS = ("Identity", "Dropout", "Flatten", "Reshape")


def _attr_ints(node: Node, name: str, default=None):
    a = node.attrs.get(name)
    if a is None:
        if default is None:
            raise ConvertError(f"node {node.name!r} ({node.op_type}): "
                               f"missing attribute {name!r}")
        return list(default)
    return list(a.ints)


def _attr_int(node: Node, name: str, default: int) -> int:
    a = node.attrs.get(name)
    return a.i if a is not None else default


def _sym_pads(node: Node) -> list[int]:
    pads = _attr_ints(node, "pads", [0, 0, 0, 0])
    if len(pads) != 4 or pads[0] != pads[2] or pads[1] != pads[3]:
        raise ConvertError(f"node {node.name!r} ({node.op_type}): "
                           f"asymmetric pads {pads} are not supported")
    return [pads[0], pads[1]]


class _Converter:
    def __init__(self, g: Graph):
        self.g = g
        self.consts: dict[str, Tensor] = {t.name: t for t in g.initializers}
        self.alias: dict[str, str] = {}
        self.layers: list[dict] = []
        self.tensors: dict[str, dict] = {}
        self.weights: dict[str, np.ndarray] = {}
        self.ids: set[str] = set()

    def resolve(self, name: str) -> str:
        while name in self.alias:
            name = self.alias[name]
        return name

    def const_array(self, name: str) -> np.ndarray | None:
        t = self.consts.get(self.resolve(name))
        return t.to_array() if t is not None else None

    def _layer_id(self, node: Node) -> str:
        base = node.name or node.op_type
        lid, n = base, 1
        while lid in self.ids:
            n += 1
            lid = f"{base}_{n}"
        self.ids.add(lid)
        return lid

    def _tensor(self, name: str, shape=None) -> str:
        if name not in self.tensors:
            self.tensors[name] = {"name": name, "shape": shape,
                                  "dtype": "float32", "quant": None}
        return name

    def _weight(self, name: str) -> str:
        """Materialize a constant as an IR weight tensor, byte-exact."""
        name = self.resolve(name)
        t = self.consts.get(name)
        if t is None:
            raise ConvertError(f"expected constant tensor {name!r}")
        if name not in self.weights:
            arr = t.to_array()
            if arr.dtype not in (np.dtype("<f4"), np.dtype("u1"),
                                 np.dtype("i1"), np.dtype("<i4")):
                raise ConvertError(
                    f"weight {name!r}: dtype {arr.dtype} not representable")
            self.weights[name] = arr
            dtype = {np.dtype("<f4"): "float32", np.dtype("u1"): "uint8",
                     np.dtype("i1"): "int8", np.dtype("<i4"): "int32"}[arr.dtype]
            self.tensors[name] = {"name": name, "shape": list(arr.shape),
                                  "dtype": dtype, "quant": None}
        return name

    def _emit(self, node: Node, kind: str, inputs: list[str],
              attrs: dict | None = None) -> None:
        out = node.outputs[0]
        self._tensor(out)
        self.layers.append({"id": self._layer_id(node), "kind": kind,
                            "attrs": attrs or {}, "inputs": inputs,
                            "outputs": [out]})

    # ------------------------------------------------------------- ops

    def _conv(self, node: Node) -> None:
        x = self.resolve(node.inputs[0])
        w_name = self.resolve(node.inputs[1])
        wt = self.consts.get(w_name)
        if wt is None:
            raise ConvertError(f"node {node.name!r}: Conv weight must be constant")
        if any(d != 1 for d in _attr_ints(node, "dilations", [1, 1])):
            raise ConvertError(f"node {node.name!r}: dilated Conv is not supported")
        kernel = _attr_ints(node, "kernel_shape", wt.dims[2:])
        stride = _attr_ints(node, "strides", [1, 1])
        padding = _sym_pads(node)
        group = _attr_int(node, "group", 1)
        inputs = [self._tensor(x), self._weight(w_name)]
        if len(node.inputs) > 2 and node.inputs[2]:
            inputs.append(self._weight(node.inputs[2]))
        attrs = {"kernel": kernel, "stride": stride, "padding": padding}
        if group == wt.dims[0] and wt.dims[1] == 1 and group > 1:
            kind = "DepthwiseConv2D"
        else:
            kind = "Conv2D"
            if group != 1:
                attrs["groups"] = group
        self._emit(node, kind, inputs, attrs)

    def _gemm(self, node: Node) -> None:
        alpha = node.attrs["alpha"].f if "alpha" in node.attrs else 1.0
        beta = node.attrs["beta"].f if "beta" in node.attrs else 1.0
        if alpha != 1.0 or beta != 1.0 or _attr_int(node, "transA", 0) != 0:
            raise ConvertError(f"node {node.name!r}: only plain Gemm "
                               "(alpha=beta=1, transA=0) is supported")
        if _attr_int(node, "transB", 0) != 1:
            raise ConvertError(
                f"node {node.name!r}: Gemm requires transB=1 (weights stored "
                "(out, in)); transposing would re-encode the weight bytes")
        inputs = [self._tensor(self.resolve(node.inputs[0])),
                  self._weight(node.inputs[1])]
        if len(node.inputs) > 2 and node.inputs[2]:
            inputs.append(self._weight(node.inputs[2]))
        self._emit(node, "Dense", inputs)

    def _clip(self, node: Node) -> None:
        def bound(idx, attr, default):
            if attr in node.attrs:
                return node.attrs[attr].f
            if len(node.inputs) > idx and node.inputs[idx]:
                arr = self.const_array(node.inputs[idx])
                if arr is None:
                    raise ConvertError(
                        f"node {node.name!r}: Clip bound must be constant")
                return float(arr.reshape(-1)[0])
            return default
        lo = bound(1, "min", -math.inf)
        hi = bound(2, "max", math.inf)
        if lo == 0.0 and hi == 6.0:
            kind = "ReLU6"
        elif lo == 0.0 and hi == math.inf:
            kind = "ReLU"
        else:
            raise ConvertError(f"node {node.name!r}: Clip({lo}, {hi}) has no "
                               "IR equivalent (only ReLU / ReLU6 ranges)")
        self._emit(node, kind, [self._tensor(self.resolve(node.inputs[0]))])

    def _pool(self, node: Node, kind: str) -> None:
        attrs = {"kernel": _attr_ints(node, "kernel_shape"),
                 "stride": _attr_ints(node, "strides", [1, 1]),
                 "padding": _sym_pads(node)}
        if node.op_type == "AveragePool" and attrs["padding"] != [0, 0] \
                and _attr_int(node, "count_include_pad", 0) == 0:
            raise ConvertError(f"node {node.name!r}: AveragePool excluding "
                               "pads from the divisor is not supported")
        if _attr_int(node, "ceil_mode", 0) != 0:
            raise ConvertError(f"node {node.name!r}: ceil_mode pooling "
                               "is not supported")
        self._emit(node, kind, [self._tensor(self.resolve(node.inputs[0]))],
                   attrs)

    def _reduce_mean(self, node: Node) -> None:
        axes = list(node.attrs["axes"].ints) if "axes" in node.attrs else None
        if axes is None and len(node.inputs) > 1:
            arr = self.const_array(node.inputs[1])
            axes = arr.reshape(-1).tolist() if arr is not None else None
        if axes is None or sorted(a % 4 for a in axes) != [2, 3]:
            raise ConvertError(f"node {node.name!r}: ReduceMean only maps to "
                               "global average pooling (axes [2, 3])")
        self._emit(node, "GlobalAvgPool",
                   [self._tensor(self.resolve(node.inputs[0]))])

    def _resize(self, node: Node) -> None:
        mode = node.attrs["mode"].s.decode() if "mode" in node.attrs else "nearest"
        if mode != "nearest":
            raise ConvertError(f"node {node.name!r}: Resize mode {mode!r} "
                               "is not supported (nearest only)")
        scales = None
        if len(node.inputs) > 2 and node.inputs[2]:
            scales = self.const_array(node.inputs[2])
        if scales is None:
            raise ConvertError(f"node {node.name!r}: Resize needs constant scales")
        s = [float(v) for v in scales.reshape(-1)]
        if len(s) != 4 or s[0] != 1 or s[1] != 1 or s[2] != s[3] \
                or s[2] != int(s[2]) or s[2] < 1:
            raise ConvertError(f"node {node.name!r}: Resize scales {s} must be "
                               "[1, 1, s, s] with integer s")
        self._emit(node, "UpsampleNearest",
                   [self._tensor(self.resolve(node.inputs[0]))],
                   {"scale": int(s[2])})

    def _concat(self, node: Node) -> None:
        if _attr_int(node, "axis", 1) != 1:
            raise ConvertError(f"node {node.name!r}: Concat is only supported "
                               "on the channel axis")
        self._emit(node, "Concat",
                   [self._tensor(self.resolve(n)) for n in node.inputs],
                   {"axis": 1})

    def _add(self, node: Node) -> None:
        for n in node.inputs:
            if self.resolve(n) in self.consts:
                raise ConvertError(f"node {node.name!r}: Add with a constant "
                                   "operand is not supported")
        self._emit(node, "Add",
                   [self._tensor(self.resolve(n)) for n in node.inputs])

    # ------------------------------------------------------------ driver

    def _alias_node(self, node: Node) -> None:
        if node.op_type == "Reshape":
            shape = self.const_array(node.inputs[1]) if len(node.inputs) > 1 else None
            if shape is None or len(shape.reshape(-1)) != 2:
                raise ConvertError(
                    f"node {node.name!r}: only 2-D (flattening) Reshape "
                    "is supported")
        if node.op_type == "Flatten" and _attr_int(node, "axis", 1) != 1:
            raise ConvertError(f"node {node.name!r}: Flatten axis must be 1")
        src = self.resolve(node.inputs[0])
        for out in node.outputs:
            self.alias[out] = src

    def run(self):
        g = self.g
        const_names = set(self.consts)
        for vi in g.inputs:
            if vi.name in const_names:
                continue  # initializers may be re-listed as graph inputs
            if any(isinstance(d, str) or d < 1 for d in vi.dims):
                raise ConvertError(
                    f"graph input {vi.name!r}: dynamic shape {vi.dims} is "
                    "not supported (deployment graphs are static)")
            self.tensors[vi.name] = {"name": vi.name, "shape": list(vi.dims),
                                     "dtype": "float32", "quant": None}
        graph_inputs = [vi.name for vi in g.inputs if vi.name not in const_names]

        handlers = {
            "Conv": self._conv,
            "Gemm": self._gemm,
            "Relu": lambda n: self._emit(
                n, "ReLU", [self._tensor(self.resolve(n.inputs[0]))]),
            "Clip": self._clip,
            "Add": self._add,
            "GlobalAveragePool": lambda n: self._emit(
                n, "GlobalAvgPool", [self._tensor(self.resolve(n.inputs[0]))]),
            "ReduceMean": self._reduce_mean,
            "MaxPool": lambda n: self._pool(n, "MaxPool"),
            "AveragePool": lambda n: self._pool(n, "AvgPool"),
            "Concat": self._concat,
            "Resize": self._resize,
        }
        for node in g.nodes:
            if node.op_type == "Constant":
                t = node.attrs["value"].t
                if t is None:
                    raise ConvertError(
                        f"node {node.name!r}: Constant without a tensor value")
                t.name = node.outputs[0]
                self.consts[t.name] = t
            elif node.op_type in _ALIAS_OPS:
                self._alias_node(node)
            else:
                fn = handlers.get(node.op_type)
                if fn is None:
                    raise ConvertError(
                        f"unsupported operator {node.op_type!r} "
                        f"(node {node.name!r})")
                fn(node)

        outputs = []
        for vi in g.outputs:
            name = self.resolve(vi.name)
            self._tensor(name)
            outputs.append(name)
        doc = {"tensors": list(self.tensors.values()),
               "layers": self.layers,
               "inputs": graph_inputs,
               "outputs": outputs}
        return doc, self.weights


def convert(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Convert an ONNX file to (IR JSON document, weight tensors)."""
    try:
        g = load_model(path)
    except OnnxError as exc:
        raise ConvertError(str(exc)) from exc
    return _Converter(g).run()


def extract_weights(path: str) -> dict[str, np.ndarray]:
    """Just the weight tensors actually consumed by the converted graph."""
    return convert(path)[1]
