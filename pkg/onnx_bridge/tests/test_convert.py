import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from conftest import export_onnx
from onnx_bridge import cli, load_model, wire
from onnx_bridge.convert import ConvertError, convert, extract_weights


def _validate(tmp_path, onnx_path):
    """Run the converter CLI, then the toolchain's import CLI on the
    result. Returns the re-exported graph doc (shapes inferred)."""
    out = tmp_path / "conv"
    assert cli.main(["convert", str(onnx_path), "--out", str(out)]) == 0
    args = ["import", str(out / "graph.json"), "--out", str(tmp_path / "imp")]
    if (out / "graph_weights.json").exists():
        args += ["--weights", str(out / "graph_weights.json")]
    r = subprocess.run([sys.executable, "-m", "j3dsim.cli", *args],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return json.loads((tmp_path / "imp" / "graph.json").read_text())


def _mac_total(doc):
    shapes = {t["name"]: t["shape"] for t in doc["tensors"]}
    total = 0
    for l in doc["layers"]:
        if l["kind"] in ("Conv2D", "DepthwiseConv2D"):
            n, co, oh, ow = shapes[l["outputs"][0]]
            _, cin_g, kh, kw = shapes[l["inputs"][1]]
            total += n * co * oh * ow * cin_g * kh * kw
        elif l["kind"] == "Dense":
            co, ci = shapes[l["inputs"][1]]
            total += co * ci
    return total


# ----------------------------------------------------------- wire parser

def test_wire_round_trip():
    # field 1 varint 300, field 2 bytes "hi", field 3 fixed32
    buf = b"\x08\xac\x02" + b"\x12\x02hi" + b"\x1d\x00\x00\x80\x3f"
    got = list(wire.fields(buf))
    assert got[0] == (1, 0, 300)
    assert got[1] == (2, 2, b"hi")
    assert wire.as_float32(got[2][2]) == 1.0


def test_wire_truncation_detected():
    with pytest.raises(wire.WireError):
        list(wire.fields(b"\x08\xac"))  # varint missing its last byte
    with pytest.raises(wire.WireError):
        list(wire.fields(b"\x12\x05hi"))  # declared 5 bytes, only 2 present


# ------------------------------------------------------------ small net

def test_small_net_structure(small_onnx):
    doc, weights = convert(small_onnx)
    kinds = [l["kind"] for l in doc["layers"]]
    assert kinds == ["Conv2D", "ReLU", "MaxPool", "Conv2D", "ReLU6",
                     "GlobalAvgPool", "Dense"]
    conv1 = doc["layers"][0]
    assert conv1["attrs"] == {"kernel": [3, 3], "stride": [1, 1],
                              "padding": [1, 1]}
    assert len(conv1["inputs"]) == 3  # x, w, bias
    pool = doc["layers"][2]
    assert pool["attrs"]["kernel"] == [2, 2] and pool["attrs"]["stride"] == [2, 2]
    assert len(doc["inputs"]) == 1 and len(doc["outputs"]) == 1


def test_small_net_weight_values(small_net, small_onnx):
    _, weights = convert(small_onnx)
    by_shape = {tuple(a.shape): a for a in weights.values()}
    want = small_net.conv1.weight.detach().numpy()
    assert np.array_equal(by_shape[want.shape], want)
    fc = small_net.fc.weight.detach().numpy()
    assert np.array_equal(by_shape[fc.shape], fc)  # (out, in), not transposed


def test_weight_bytes_byte_exact(small_onnx, tmp_path):
    out = tmp_path / "w"
    assert cli.main(["extract-weights", str(small_onnx), "--out", str(out)]) == 0
    manifest = json.loads((out / "weights.json").read_text())
    blob = (out / "weights.bin").read_bytes()
    inits = {t.name: t for t in load_model(small_onnx).initializers}
    checked = 0
    for name, ent in manifest["tensors"].items():
        if name in inits:
            raw = inits[name].payload()
            assert blob[ent["offset"]:ent["offset"] + ent["nbytes"]] == raw, name
            checked += 1
    assert checked >= 4  # 2 conv w+b pairs at minimum pass through untouched


def test_small_net_round_trip_shapes(small_onnx, tmp_path):
    doc = _validate(tmp_path, small_onnx)
    shapes = {t["name"]: t["shape"] for t in doc["tensors"]}
    assert shapes[doc["inputs"][0]] == [1, 3, 16, 16]
    assert shapes[doc["outputs"][0]] == [1, 10, 1, 1]
    assert _mac_total(doc) == (8 * 16 * 16 * 3 * 9 + 16 * 4 * 4 * 8 * 9
                               + 10 * 16)


# ------------------------------------------------------------ MobileNetV2

def test_mobilenet_v2_mac_count(mobilenet_v2_onnx, tmp_path):
    doc = _validate(tmp_path, mobilenet_v2_onnx)
    total = _mac_total(doc)
    assert abs(total - 300e6) <= 0.01 * 300e6
    assert total == 300_774_272  # exact, batchnorm folded into conv


def test_mobilenet_v2_initializer_bytes(mobilenet_v2_onnx, tmp_path):
    weights = extract_weights(mobilenet_v2_onnx)
    inits = {t.name: t for t in load_model(mobilenet_v2_onnx).initializers}
    checked = 0
    for name, arr in weights.items():
        if name in inits:
            assert arr.tobytes() == inits[name].payload(), name
            checked += 1
    assert checked >= 50


# -------------------------------------------------------------- negatives

def test_unsupported_operator_is_named(tmp_path):
    class Net(torch.nn.Module):
        def forward(self, x):
            return torch.softmax(x, dim=1)

    path = export_onnx(Net(), torch.randn(1, 4), tmp_path / "soft.onnx")
    with pytest.raises(ConvertError, match="Softmax"):
        convert(path)


def test_dynamic_shape_rejected(tmp_path):
    class Net(torch.nn.Module):
        def forward(self, x):
            return torch.relu(x)

    path = export_onnx(Net(), torch.randn(1, 3, 8, 8), tmp_path / "dyn.onnx",
                       input_names=["x"],
                       dynamic_axes={"x": {0: "batch"}})
    with pytest.raises(ConvertError, match="dynamic"):
        convert(path)


def test_not_onnx_file_rejected(tmp_path):
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"definitely not protobuf \xff\xff\xff\xff")
    with pytest.raises(ConvertError):
        convert(str(bad))


def test_cli_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"\xff\xff")
    assert cli.main(["convert", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err
