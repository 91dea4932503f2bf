"""Post-training INT8 quantization.

Scheme (declared, per-tensor):
  weights     int8 symmetric: scale = max|w|/127, zero_point = 0
  activations uint8 asymmetric: scale = (max-min)/255, zp = round(-min/scale)
  biases      int32 with scale = scale_in * scale_w
Rounding is half-away-from-zero everywhere. Degenerate calibration range
(max == min) floors the scale at 1.0 with zero_point 0.

Requantization narrows a 32-bit accumulator back to uint8:
  y = clamp(rnd(acc * m0 * 2^-(30+shift)) + zero_point, 0, 255),  m0 in [2^30, 2^31)

ReLU/ReLU6 layers share their output quantization with their producer's
output tensor, which makes activation folding in the backend bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from j3dsim.ir import GraphIR, IRError, QuantParams, TensorSpec, topological_order


@dataclass
class CalibStats:
    """Running per-tensor extrema over the calibration set."""

    stats: dict[str, tuple[float, float]]
    sample_count: int


def rhaz(x):
    """Round half away from zero (scalar or ndarray)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_scale(ratio: float) -> tuple[int, int]:
    """Encode a positive real ratio as (m0, shift) with
    ratio ~= m0 * 2^-(30+shift), m0 in [2^30, 2^31)."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    m, e = math.frexp(ratio)  # ratio = m * 2^e, m in [0.5, 1)
    m0 = int(round(m * (1 << 31)))
    shift = 1 - e
    if m0 == 1 << 31:
        m0 >>= 1
        shift -= 1
    assert (1 << 30) <= m0 < (1 << 31)
    return m0, shift


def requantize(acc, m0: int, shift: int, zero_point: int):
    """Bit-exact accumulator narrowing; acc may be a scalar or int array."""
    return requantize_clamped(acc, m0, shift, zero_point, 0, 255)


def requantize_clamped(acc, m0: int, shift: int, zero_point: int, lo: int, hi: int):
    """requantize with a custom output clamp (activation folding)."""
    if not (1 << 30) <= m0 < (1 << 31):
        raise ValueError(f"m0 out of range: {m0}")
    a = np.asarray(acc, dtype=np.int64)
    prod = a * m0
    k = 30 + shift
    if k <= 0:
        scaled = prod << (-k)
    else:
        half = np.int64(1) << (k - 1)
        mag = (np.abs(prod) + half) >> k
        scaled = np.sign(prod) * mag
    y = np.clip(scaled + zero_point, lo, hi)
    if np.isscalar(acc) or np.asarray(acc).ndim == 0:
        return int(y)
    return y.astype(np.int64)


def rescale_int(value, m0: int, shift: int):
    """Fixed-point multiply without clamp or offset (Add/Concat arms)."""
    a = np.asarray(value, dtype=np.int64)
    prod = a * m0
    k = 30 + shift
    if k <= 0:
        out = prod << (-k)
    else:
        half = np.int64(1) << (k - 1)
        out = np.sign(prod) * ((np.abs(prod) + half) >> k)
    if np.isscalar(value) or np.asarray(value).ndim == 0:
        return int(out)
    return out


# ------------------------------------------------------------- calibration

def calibrate(g: GraphIR, samples) -> CalibStats:
    """Run the float oracle over the samples, recording per-tensor extrema."""
    from j3dsim import oracle

    if len(samples) < 1:
        raise ValueError("calibration needs at least one sample")
    stats: dict[str, tuple[float, float]] = {}
    for sample in samples:
        recorded = oracle.run_float(g, sample, record=True)
        for name, arr in recorded.items():
            lo, hi = float(arr.min()), float(arr.max())
            if name in stats:
                plo, phi = stats[name]
                stats[name] = (min(plo, lo), max(phi, hi))
            else:
                stats[name] = (lo, hi)
    return CalibStats(stats, len(samples))


def _act_params(lo: float, hi: float) -> QuantParams:
    lo, hi = min(lo, 0.0), max(hi, 0.0)  # range must include zero
    if hi == lo:
        return QuantParams(scale=1.0, zero_point=0, signed=False)
    scale = (hi - lo) / 255.0
    zp = int(min(255, max(0, round(-lo / scale))))
    return QuantParams(scale=scale, zero_point=zp, signed=False)


def _weight_params(w: np.ndarray) -> QuantParams:
    amax = float(np.abs(w).max())
    scale = amax / 127.0 if amax > 0 else 1.0
    return QuantParams(scale=scale, zero_point=0, signed=True)


_ACT_KINDS = ("ReLU", "ReLU6")
_SHARE_IN_OUT = ("MaxPool", "UpsampleNearest")


def derive_quant_params(stats: CalibStats, g: GraphIR) -> dict[str, QuantParams]:
    """Per-tensor QuantParams from calibration stats and weight payloads.

    Output tensors of conv-like layers additionally carry the requant
    (m0, shift) for scale_in*scale_w/scale_out.
    """
    params: dict[str, QuantParams] = {}
    order = topological_order(g)
    for name, spec in g.tensors.items():
        if name in g.data:
            continue
        if name not in stats.stats:
            raise IRError(f"no calibration stats for tensor {name!r}")
        params[name] = _act_params(*stats.stats[name])
    # Activation layers share params with their producer's output so the
    # backend can fold them into the producer's requant clamp.
    for layer in reversed(order):
        if layer.kind in _ACT_KINDS:
            params[layer.inputs[0]] = replace(params[layer.outputs[0]])
        elif layer.kind in _SHARE_IN_OUT:
            # max/copy semantics are only exact when in and out agree
            params[layer.outputs[0]] = replace(params[layer.inputs[0]])
    for layer in order:
        if layer.kind not in ("Conv2D", "DepthwiseConv2D", "Dense"):
            continue
        w = g.data[layer.inputs[1]]
        params[layer.inputs[1]] = _weight_params(w)
        if len(layer.inputs) > 2:
            bname = layer.inputs[2]
            s_in = params[layer.inputs[0]].scale
            s_w = params[layer.inputs[1]].scale
            params[bname] = QuantParams(scale=s_in * s_w, zero_point=0, signed=True, bitwidth=32)
        s_in = params[layer.inputs[0]].scale
        s_w = params[layer.inputs[1]].scale
        s_out = params[layer.outputs[0]].scale
        m0, shift = encode_scale(s_in * s_w / s_out)
        params[layer.outputs[0]] = replace(
            params[layer.outputs[0]], requant={"m0": m0, "shift": shift}
        )
    return params


def quantize_graph(g: GraphIR, params: dict[str, QuantParams]) -> GraphIR:
    """Produce the integer-typed graph: int8 weights, int32 biases, uint8
    activations, QuantParams attached to every tensor."""
    tensors: dict[str, TensorSpec] = {}
    data: dict[str, np.ndarray] = {}
    bias_of: dict[str, str] = {}
    for layer in g.layers:
        if layer.kind in ("Conv2D", "DepthwiseConv2D", "Dense") and len(layer.inputs) > 2:
            bias_of[layer.inputs[2]] = layer.id
    for name, spec in g.tensors.items():
        if name not in params:
            raise IRError(f"missing quant params for tensor {name!r}")
        qp = params[name]
        if name in g.data:
            w = g.data[name]
            if name in bias_of:
                q = np.clip(rhaz(w / qp.scale), -(2**31), 2**31 - 1).astype(np.int32)
                dtype = "int32"
            else:
                q = np.clip(rhaz(w / qp.scale), -127, 127).astype(np.int8)
                dtype = "int8"
            data[name] = q
        else:
            dtype = "uint8"
        tensors[name] = TensorSpec(name, spec.shape, dtype, replace(qp))
    return GraphIR(tensors, g.layers, list(g.inputs), list(g.outputs), data)


def quantize_input(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    q = rhaz(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (q.astype(np.float32) - qp.zero_point) * qp.scale
