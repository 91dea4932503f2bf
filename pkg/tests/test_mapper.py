from dataclasses import replace

import pytest

from conftest import quantize_fixture
from graph_gen import random_graph
from j3dsim import models
from j3dsim.config import j3dai_default
from j3dsim.layout import MapError
from j3dsim.mapper import (
    MappingPlan,
    brute_force_plan,
    check_fit,
    estimate_cycles,
    plan_mapping,
)


def _instances():
    fixtures = [
        ("tiny_cnn", models.build_tiny_cnn()),
        ("pointwise", models.build_pointwise_fixture()),
        ("overlap", models.build_overlap_fixture()),
    ]
    fixtures += [(f"rand{s}", random_graph(s)) for s in range(17)]
    return fixtures


@pytest.mark.parametrize("name,g", _instances())
def test_plan_matches_brute_force_optimum(cfg, name, g):
    qg, _ = quantize_fixture(g, seed=hash(name) % 1000)
    plan = plan_mapping(qg, cfg)
    best = brute_force_plan(qg, cfg)
    for lp in plan.layers:
        assert (lp.bytes_moved, max(lp.issues)) == best[lp.layer_id], lp.layer_id


def test_plan_matches_brute_force_with_small_banks(cfg):
    # shrunken banks force reduction chunking on the same fixture
    small = replace(cfg, ncb_bank_bytes=256)
    qg, _ = quantize_fixture(models.build_pointwise_fixture(), seed=0)
    plan = plan_mapping(qg, small)
    best = brute_force_plan(qg, small)
    for lp in plan.layers:
        assert (lp.bytes_moved, max(lp.issues)) == best[lp.layer_id]


def test_check_fit_postcondition(cfg):
    qg, _ = quantize_fixture(models.build_tiny_cnn(), seed=0)
    plan = plan_mapping(qg, cfg)
    res = check_fit(plan, cfg)
    assert res["ok"] and res["violations"] == []
    m = res["metrics"]
    assert 0 < m["l2_occupancy"] <= 1
    for lm in m["per_layer"].values():
        assert 0 < lm["sram_occupancy"] <= 1
        assert 0 < lm["pe_utilization"] <= 1


def test_plan_json_round_trip(cfg):
    qg, _ = quantize_fixture(models.build_overlap_fixture(), seed=0)
    plan = plan_mapping(qg, cfg)
    plan2 = MappingPlan.from_json(plan.to_json())
    assert plan2.to_json() == plan.to_json()
    assert [lp.layer_id for lp in plan2.layers] == [lp.layer_id for lp in plan.layers]


def test_estimate_overlap_never_worse(cfg):
    for seed in (1, 5, 9):
        qg, _ = quantize_fixture(random_graph(seed), seed=seed)
        plan = plan_mapping(qg, cfg)
        assert estimate_cycles(plan, cfg, overlap=True) <= estimate_cycles(
            plan, cfg, overlap=False)


def test_unmappable_layer_is_named(cfg):
    import numpy as np

    from j3dsim import ir

    tensors = {"x": ir.TensorSpec("x", (1, 8, 4, 4)),
               "y": ir.TensorSpec("y", (1, 8, 8, 8))}
    g = ir.GraphIR(tensors,
                   [ir.LayerNode("up", "UpsampleNearest", ["x"], ["y"],
                                 {"scale": 2})],
                   ["x"], ["y"])
    qg, _ = quantize_fixture(g, seed=0)
    with pytest.raises(MapError, match="up"):
        plan_mapping(qg, j3dai_default())
