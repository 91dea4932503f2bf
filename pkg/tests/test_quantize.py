import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from j3dsim import models, quantize


@given(st.floats(min_value=1e-9, max_value=1e9,
                 allow_nan=False, allow_infinity=False))
def test_encode_scale_reconstructs_ratio(ratio):
    m0, shift = quantize.encode_scale(ratio)
    assert (1 << 30) <= m0 < (1 << 31)
    approx = m0 * 2.0 ** (-(30 + shift))
    assert abs(approx - ratio) <= ratio * 2.0 ** -30


def test_encode_scale_rejects_nonpositive():
    with pytest.raises(ValueError):
        quantize.encode_scale(0.0)
    with pytest.raises(ValueError):
        quantize.encode_scale(-1.0)


@given(st.integers(min_value=-(2 ** 25), max_value=2 ** 25),
       st.floats(min_value=1e-4, max_value=16.0,
                 allow_nan=False, allow_infinity=False))
@settings(max_examples=200)
def test_rescale_int_rounds_half_away_from_zero(v, ratio):
    m0, shift = quantize.encode_scale(ratio)
    exact = v * m0 * 2.0 ** (-(30 + shift))
    got = quantize.rescale_int(v, m0, shift)
    assert got == int(np.sign(exact) * np.floor(abs(exact) + 0.5))


def test_requantize_clamped_bounds_and_offset():
    m0, shift = quantize.encode_scale(0.5)
    assert quantize.requantize_clamped(10, m0, shift, 100, 0, 255) == 105
    assert quantize.requantize_clamped(10_000, m0, shift, 0, 0, 255) == 255
    assert quantize.requantize_clamped(-10_000, m0, shift, 0, 0, 255) == 0


def test_requantize_rejects_bad_m0():
    with pytest.raises(ValueError, match="m0"):
        quantize.requantize(1, 5, 0, 0)


def test_rescale_int_matches_requantize_core():
    m0, shift = quantize.encode_scale(0.037)
    v = np.arange(-500, 500, dtype=np.int64)
    a = quantize.rescale_int(v, m0, shift)
    b = quantize.requantize_clamped(v, m0, shift, 0, -(2 ** 31), 2 ** 31 - 1)
    assert np.array_equal(a, b)


def test_quantize_dequantize_round_trip_error():
    qp = quantize.QuantParams(scale=0.02, zero_point=128, signed=False)
    x = np.linspace(-2.5, 2.5, 101, dtype=np.float32).reshape(1, 1, 1, -1)
    q = quantize.quantize_input(x, qp)
    assert q.dtype == np.uint8
    back = quantize.dequantize(q, qp)
    assert np.max(np.abs(back - x)) <= qp.scale  # half step + clamp margin


def test_derive_quant_params_covers_all_tensors():
    g = models.build_tiny_cnn()
    rng = np.random.default_rng(0)
    shape = g.tensors[g.inputs[0]].shape
    samples = [rng.standard_normal(shape).astype(np.float32) for _ in range(2)]
    params = quantize.derive_quant_params(quantize.calibrate(g, samples), g)
    for name in g.tensors:
        assert name in params, name
    for name, arr in g.data.items():
        assert params[name].signed  # weights int8
    qg = quantize.quantize_graph(g, params)
    for name in g.data:
        if qg.tensors[name].shape is not None and len(qg.tensors[name].shape) > 1:
            assert qg.data[name].dtype == np.int8


def test_calibrate_requires_samples():
    with pytest.raises(ValueError):
        quantize.calibrate(models.build_tiny_cnn(), [])
