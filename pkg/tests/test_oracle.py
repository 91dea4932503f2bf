import numpy as np
import pytest

from conftest import quantize_fixture
from graph_gen import random_graph
from j3dsim import ir, models, oracle, quantize


def _conv_graph(x, w, b=None, stride=1, pad=0):
    co, ci, kh, kw = w.shape
    oh = (x.shape[2] + 2 * pad - kh) // stride + 1
    ow = (x.shape[3] + 2 * pad - kw) // stride + 1
    tensors = {
        "x": ir.TensorSpec("x", x.shape),
        "w": ir.TensorSpec("w", w.shape),
        "y": ir.TensorSpec("y", (1, co, oh, ow)),
    }
    ins = ["x", "w"]
    if b is not None:
        tensors["b"] = ir.TensorSpec("b", b.shape)
        ins.append("b")
    g = ir.GraphIR(tensors, [ir.LayerNode("c", "Conv2D", ins, ["y"],
                                          {"kernel": [kh, kw],
                                           "stride": [stride, stride],
                                           "padding": [pad, pad]})],
                   ["x"], ["y"])
    g.data["w"] = w
    if b is not None:
        g.data["b"] = b
    return g


def test_run_float_matches_hand_conv():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = oracle.run_float(_conv_graph(x, w, b, pad=1), {"x": x})["y"]
    # direct loop reference at one output position
    oy, ox = 2, 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    want = (xp[0, :, oy:oy + 3, ox:ox + 3] * w[1]).sum() + b[1]
    assert np.allclose(out[0, 1, oy, ox], want, atol=1e-5)


def test_run_int_tracks_float_within_quant_error():
    for seed in (0, 3, 11):
        g = random_graph(seed)
        qg, x = quantize_fixture(g, seed=seed + 100)
        got = oracle.run_int(qg, {qg.inputs[0]: x})
        ref = oracle.run_float(
            g, quantize.dequantize(x, qg.tensors[qg.inputs[0]].quant))
        for name in qg.outputs:
            qp = qg.tensors[name].quant
            deq = quantize.dequantize(got[name].astype(np.uint8), qp)
            scale = max(qp.scale, 1e-6)
            err = np.abs(deq - ref[name]) / scale
            # within a few quantization steps of the float reference
            assert np.percentile(err, 99) < 16.0


def test_run_int_is_integer_and_in_range():
    qg, x = quantize_fixture(models.build_tiny_cnn(), seed=2)
    got = oracle.run_int(qg, {qg.inputs[0]: x})
    for name in qg.outputs:
        arr = got[name]
        assert np.issubdtype(arr.dtype, np.integer)
        assert arr.min() >= 0 and arr.max() <= 255


def test_run_int_overflow_detected():
    # 2048 * 49 taps of 255 * 127 exceeds the int32 accumulator
    x = np.zeros((1, 2048, 7, 7), dtype=np.float32)
    w = np.zeros((8, 2048, 7, 7), dtype=np.float32)
    g = _conv_graph(x, w)
    m0, shift = quantize.encode_scale(1.0)
    g.tensors["x"].quant = quantize.QuantParams(scale=1.0, zero_point=0,
                                                signed=False)
    g.tensors["w"].quant = quantize.QuantParams(scale=1.0, zero_point=0,
                                                signed=True)
    g.tensors["y"].quant = quantize.QuantParams(scale=1.0, zero_point=0,
                                                signed=False,
                                                requant={"m0": m0,
                                                         "shift": shift})
    g.data["w"] = np.full(w.shape, 127, dtype=np.int8)
    with pytest.raises(oracle.OracleOverflow):
        oracle.run_int(g, {"x": np.full(x.shape, 255, dtype=np.uint8)})


def test_record_returns_intermediates():
    g = models.build_tiny_cnn()
    x = np.zeros(g.tensors[g.inputs[0]].shape, dtype=np.float32)
    rec = oracle.run_float(g, x, record=True)
    for layer in g.layers:
        assert layer.outputs[0] in rec
