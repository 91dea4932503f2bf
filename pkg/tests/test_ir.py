import numpy as np
import pytest

from j3dsim import ir, models


def _tiny():
    tensors = {
        "x": ir.TensorSpec("x", (1, 4, 8, 8)),
        "w": ir.TensorSpec("w", (8, 4, 3, 3)),
        "y": ir.TensorSpec("y", (1, 8, 8, 8)),
    }
    layers = [ir.LayerNode("c1", "Conv2D", ["x", "w"], ["y"],
                           {"kernel": [3, 3], "stride": [1, 1],
                            "padding": [1, 1]})]
    g = ir.GraphIR(tensors, layers, ["x"], ["y"])
    g.data["w"] = np.zeros((8, 4, 3, 3), dtype=np.float32)
    return g


def test_validate_accepts_tiny():
    ir.validate_graph(_tiny())


def test_validate_rejects_dangling_reference():
    g = _tiny()
    g.layers[0].inputs[0] = "missing"
    with pytest.raises(ir.IRError, match="missing"):
        ir.validate_graph(g)


def test_validate_rejects_cycle():
    tensors = {"x": ir.TensorSpec("x", (1, 4, 8, 8)),
               "u": ir.TensorSpec("u", (1, 4, 8, 8)),
               "v": ir.TensorSpec("v", (1, 4, 8, 8)),
               "y": ir.TensorSpec("y", (1, 4, 8, 8))}
    layers = [ir.LayerNode("a", "Add", ["x", "v"], ["u"]),
              ir.LayerNode("b", "ReLU", ["u"], ["v"]),
              ir.LayerNode("c", "ReLU", ["v"], ["y"])]
    g = ir.GraphIR(tensors, layers, ["x"], ["y"])
    with pytest.raises(ir.IRError, match="cycle"):
        ir.validate_graph(g)


def test_validate_rejects_duplicate_producer():
    g = _tiny()
    g.tensors["z"] = ir.TensorSpec("z", (1, 8, 8, 8))
    g.layers.append(ir.LayerNode("a", "ReLU", ["y"], ["z"]))
    g.layers.append(ir.LayerNode("b", "ReLU", ["z"], ["y"]))
    with pytest.raises(ir.IRError, match="produced by both"):
        ir.validate_graph(g)


def test_topological_order_respects_deps():
    g = models.build_tiny_cnn()
    order = [l.id for l in ir.topological_order(g)]
    produced = set(g.inputs) | set(g.data)
    for l in ir.topological_order(g):
        assert all(t in produced for t in l.inputs)
        produced.update(l.outputs)
    assert len(order) == len(g.layers)


def test_json_round_trip_preserves_structure():
    g = models.build_tiny_cnn()
    g2 = ir.import_json(ir.export_json(g), dict(g.data))
    assert [l.id for l in g2.layers] == [l.id for l in g.layers]
    assert set(g2.tensors) == set(g.tensors)
    for n, t in g.tensors.items():
        assert g2.tensors[n].shape == t.shape
    for n, arr in g.data.items():
        assert np.array_equal(g2.data[n], arr)


def test_import_rejects_malformed_document():
    with pytest.raises(ir.IRError, match="malformed"):
        ir.import_json("{not json")


def test_infer_shapes_conv():
    g = _tiny()
    g.tensors["y"] = ir.TensorSpec("y", None)
    g = ir.infer_shapes(g)
    assert g.tensors["y"].shape == (1, 8, 8, 8)


def test_layer_macs_conv():
    g = _tiny()
    # 8x8 output, 8 cout, 4 cin, 3x3 kernel
    assert ir.layer_macs(g, g.layers[0]) == 8 * 8 * 8 * 4 * 9


@pytest.mark.parametrize("build,expect_mmacs", [
    (lambda: models.build_mobilenet_v1(1.0, (256, 192)), 557.154304),
    (lambda: models.build_mobilenet_v1(1.0, (224, 224)), 568.740352),
    (lambda: models.build_mobilenet_v2((224, 224)), 300.774272),
])
def test_mac_count_reference_models(build, expect_mmacs):
    _, total = ir.mac_count(build())
    assert total == int(expect_mmacs * 1e6)
