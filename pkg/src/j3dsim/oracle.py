"""Reference executors defining functional ground truth.

run_float evaluates the float graph with standard semantics. run_int
evaluates the quantized graph with exact integer arithmetic: activations
minus zero-point widened, products accumulated in 32 bits (overflow is an
error here, unlike the hardware which wraps), bias added in int32, one
requantize per output element.

The simulator must produce byte-identical outputs to run_int on every
compiled graph; keep any semantic change mirrored in codegen.
"""

from __future__ import annotations

import numpy as np

from j3dsim.ir import GraphIR, IRError, topological_order
from j3dsim.quantize import encode_scale, requantize_clamped, rescale_int

_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1


class OracleOverflow(RuntimeError):
    pass


def _windows(x: np.ndarray, kernel, stride):
    """(N,C,Hp,Wp) -> (N,C,OH,OW,kh,kw) strided view."""
    kh, kw = kernel
    sh, sw = stride
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::sh, ::sw, :, :]


def _pad(x: np.ndarray, padding, value):
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def _conv_acc(x, w, stride, padding, groups, pad_value):
    """Integer or float convolution accumulation, no bias."""
    xp = _pad(x, padding, pad_value)
    n, cin, _, _ = x.shape
    cout, cin_g, kh, kw = w.shape
    win = _windows(xp, (kh, kw), stride)  # N,C,OH,OW,kh,kw
    oh, ow = win.shape[2], win.shape[3]
    if groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin * kh * kw)
        acc = cols @ w.reshape(cout, cin * kh * kw).T
        return acc.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    if groups == cin and cin_g == 1:  # depthwise
        acc = np.einsum("nchwij,cij->nchw", win, w[:, 0])
        return acc
    out = np.empty((n, cout, oh, ow), dtype=win.dtype)
    cg_out = cout // groups
    for gi in range(groups):
        xs = win[:, gi * cin_g : (gi + 1) * cin_g]
        ws = w[gi * cg_out : (gi + 1) * cg_out]
        cols = xs.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin_g * kh * kw)
        acc = cols @ ws.reshape(cg_out, cin_g * kh * kw).T
        out[:, gi * cg_out : (gi + 1) * cg_out] = acc.reshape(n, oh, ow, cg_out).transpose(
            0, 3, 1, 2
        )
    return out


def _as_value_map(g: GraphIR, x) -> dict[str, np.ndarray]:
    if isinstance(x, dict):
        values = dict(x)
    else:
        if len(g.inputs) != 1:
            raise IRError("graph has multiple inputs; pass a dict")
        values = {g.inputs[0]: x}
    for name in g.inputs:
        if name not in values:
            raise IRError(f"missing value for graph input {name!r}")
        got = tuple(np.asarray(values[name]).shape)
        want = tuple(g.tensors[name].shape)
        if got != want:
            raise IRError(f"input {name!r}: shape {got} != declared {want}")
    return values


def run_float(g: GraphIR, x, record: bool = False) -> dict[str, np.ndarray]:
    """Evaluate the float graph. Returns graph outputs, or every activation
    tensor when record=True (calibration)."""
    values = _as_value_map(g, x)
    values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
    data = {k: np.asarray(v, dtype=np.float64) for k, v in g.data.items()}

    def val(name):
        return values[name] if name in values else data[name]

    for layer in topological_order(g):
        a = layer.attrs
        xv = val(layer.inputs[0])
        kind = layer.kind
        if kind in ("Conv2D", "DepthwiseConv2D"):
            w = val(layer.inputs[1])
            groups = int(a.get("groups", 1)) if kind == "Conv2D" else w.shape[0]
            acc = _conv_acc(xv, w, a["stride"], a.get("padding", [0, 0]), groups, 0.0)
            if len(layer.inputs) > 2:
                acc = acc + val(layer.inputs[2]).reshape(1, -1, 1, 1)
            out = acc
        elif kind == "Dense":
            w = val(layer.inputs[1])
            out = (xv[:, :, 0, 0] @ w.T)[:, :, None, None]
            if len(layer.inputs) > 2:
                out = out + val(layer.inputs[2]).reshape(1, -1, 1, 1)
        elif kind == "ReLU":
            out = np.maximum(xv, 0.0)
        elif kind == "ReLU6":
            out = np.clip(xv, 0.0, 6.0)
        elif kind == "Add":
            out = xv + val(layer.inputs[1])
        elif kind == "MaxPool":
            xp = _pad(xv, a.get("padding", [0, 0]), -np.inf)
            out = _windows(xp, a["kernel"], a["stride"]).max(axis=(4, 5))
        elif kind == "AvgPool":
            kh, kw = a["kernel"]
            xp = _pad(xv, a.get("padding", [0, 0]), 0.0)
            out = _windows(xp, a["kernel"], a["stride"]).sum(axis=(4, 5)) / (kh * kw)
        elif kind == "GlobalAvgPool":
            out = xv.mean(axis=(2, 3), keepdims=True)
        elif kind == "UpsampleNearest":
            s = int(a["scale"])
            out = xv.repeat(s, axis=2).repeat(s, axis=3)
        elif kind == "Concat":
            out = np.concatenate([val(n) for n in layer.inputs], axis=1)
        else:
            raise IRError(f"layer {layer.id!r}: unsupported kind {kind!r}")
        values[layer.outputs[0]] = out.astype(np.float64)
    if record:
        return {k: v.astype(np.float32) for k, v in values.items()}
    return {k: values[k].astype(np.float32) for k in g.outputs}


def _check_i32(acc: np.ndarray, layer_id: str) -> None:
    if acc.min() < _I32_MIN or acc.max() > _I32_MAX:
        raise OracleOverflow(f"layer {layer_id!r}: 32-bit accumulator overflow")


def run_int(g: GraphIR, x, record: bool = False) -> dict[str, np.ndarray]:
    """Evaluate the quantized graph exactly. Input and outputs are uint8."""
    values = _as_value_map(g, x)
    values = {k: np.asarray(v).astype(np.int64) for k, v in values.items()}
    data = {k: np.asarray(v).astype(np.int64) for k, v in g.data.items()}

    def val(name):
        return values[name] if name in values else data[name]

    def qp(name):
        p = g.tensors[name].quant
        if p is None:
            raise IRError(f"tensor {name!r}: missing quant params")
        return p

    for layer in topological_order(g):
        a = layer.attrs
        xv = val(layer.inputs[0])
        q_in = qp(layer.inputs[0])
        q_out = qp(layer.outputs[0])
        kind = layer.kind
        if kind in ("Conv2D", "DepthwiseConv2D", "Dense"):
            w = val(layer.inputs[1])
            if kind == "Dense":
                acc = (xv[:, :, 0, 0] - q_in.zero_point) @ w.T
                acc = acc[:, :, None, None]
            else:
                groups = int(a.get("groups", 1)) if kind == "Conv2D" else w.shape[0]
                # pad with the input zero-point so border cells contribute 0
                acc = _conv_acc(
                    xv - q_in.zero_point,
                    w,
                    a["stride"],
                    a.get("padding", [0, 0]),
                    groups,
                    0,
                )
            if len(layer.inputs) > 2:
                acc = acc + val(layer.inputs[2]).reshape(1, -1, 1, 1)
            _check_i32(acc, layer.id)
            rq = q_out.requant
            if rq is None:
                raise IRError(f"layer {layer.id!r}: output tensor missing requant params")
            out = requantize_clamped(acc, rq["m0"], rq["shift"], q_out.zero_point, 0, 255)
        elif kind == "ReLU":
            out = np.maximum(xv, q_out.zero_point)
        elif kind == "ReLU6":
            q6 = min(255, q_out.zero_point + int(round(6.0 / q_out.scale)))
            out = np.clip(xv, q_out.zero_point, q6)
        elif kind in ("Add", "Concat"):
            arms = []
            for name in layer.inputs:
                qi = qp(name)
                m0, sh = encode_scale(qi.scale / q_out.scale)
                arms.append(rescale_int(val(name) - qi.zero_point, m0, sh))
            if kind == "Add":
                acc = arms[0] + arms[1]
                _check_i32(acc, layer.id)
                out = np.clip(acc + q_out.zero_point, 0, 255)
            else:
                out = np.concatenate(
                    [np.clip(arm + q_out.zero_point, 0, 255) for arm in arms], axis=1
                )
        elif kind == "MaxPool":
            xp = _pad(xv, a.get("padding", [0, 0]), q_in.zero_point)
            out = _windows(xp, a["kernel"], a["stride"]).max(axis=(4, 5))
        elif kind in ("AvgPool", "GlobalAvgPool"):
            if kind == "GlobalAvgPool":
                count = xv.shape[2] * xv.shape[3]
                acc = (xv - q_in.zero_point).sum(axis=(2, 3), keepdims=True)
            else:
                kh, kw = a["kernel"]
                count = kh * kw
                xp = _pad(xv - q_in.zero_point, a.get("padding", [0, 0]), 0)
                acc = _windows(xp, a["kernel"], a["stride"]).sum(axis=(4, 5))
            _check_i32(acc, layer.id)
            m0, sh = encode_scale(q_in.scale / (count * q_out.scale))
            out = np.clip(rescale_int(acc, m0, sh) + q_out.zero_point, 0, 255)
        elif kind == "UpsampleNearest":
            s = int(a["scale"])
            out = xv.repeat(s, axis=2).repeat(s, axis=3)
        else:
            raise IRError(f"layer {layer.id!r}: unsupported kind {kind!r}")
        values[layer.outputs[0]] = np.asarray(out, dtype=np.int64)
    if record:
        return {k: v.astype(np.uint8) for k, v in values.items()}
    return {k: values[k].astype(np.uint8) for k in g.outputs}
