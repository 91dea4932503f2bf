"""Acceptance gate: one test per top-level criterion, each printing a
single PASS/FAIL line (run with -s or -v to see them).

The MobileNetV2 256x192 MAC total is known to land at 294.66 M against
the 289 M +/-1% target; that check is kept at its stated tolerance and
fails honestly rather than being widened.
"""

import filecmp
import json
import os
import time

import numpy as np
import pytest

from conftest import compile_graph, quantize_fixture, simulate
from graph_gen import random_graph
from j3dsim import cli, ir, isa, metrics, models, oracle, scheduler
from j3dsim.config import j3dai_default, peak_macs_per_cycle, with_l2_bytes
from j3dsim.mapper import brute_force_plan, check_fit, plan_mapping
from j3dsim.sim import decode, mac_efficiency, runner


def _verdict(name, ok):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}")
    assert ok, name


def _bit_exact(g, cfg, seed):
    qg, x = quantize_fixture(g, seed=seed)
    plan, sch, prog, init, meta = compile_graph(qg, cfg)
    rep, outs = simulate(qg, x, prog, init, meta, cfg)
    ref = oracle.run_int(qg, {qg.inputs[0]: x})
    return all(np.array_equal(outs[n], ref[n].astype(np.uint8)) for n in outs), rep


def test_mac_accounting_reproduction():
    t0 = time.time()
    cases = [
        (models.build_mobilenet_v1(1.0, (256, 192)), 557e6),
        (models.build_mobilenet_v1(1.0, (224, 224)), 569e6),
        (models.build_mobilenet_v2((256, 192)), 289e6),
        (models.build_mobilenet_v2((224, 224)), 300e6),
    ]
    ok = True
    for g, want in cases:
        _, total = ir.mac_count(g)
        if abs(total - want) > 0.01 * want:
            ok = False
    ok = ok and (time.time() - t0) < 1.0
    _verdict("MAC accounting: 557/569/289/300 MMACs +/-1%", ok)


def test_architecture_constants():
    t0 = time.time()
    cfg = j3dai_default()
    ok = peak_macs_per_cycle(cfg) == 768
    d1 = isa.Desc(isa.DIR_L2S, 0, (0,), ((128, 1, 1),))          # 1024 bits
    d2 = isa.Desc(isa.DIR_L2S, 0, tuple(range(10)), ((12500, 1, 1),))  # 1e6
    p = isa.Program(cfg.num_clusters,
                    [[isa.Instr("HALT")] for _ in range(cfg.num_clusters)],
                    {0: d1, 1: d2})
    _, meta, _, _, _ = decode.decode_program(p, cfg)
    ok = ok and meta[0, 7] == 1 and meta[1, 7] == 977
    n = 4096
    dma = -(-n * 8 // cfg.interconnect_width_bits)
    dmpa = -(-n * 8 // cfg.dmpa_width_bits)
    ok = ok and dma == 16 * dmpa
    ok = ok and (time.time() - t0) < 1.0
    _verdict("architecture constants: 768 MAC/cy, DMPA 977 cy/Mbit, DMA 16x", ok)


def test_metrics_regression():
    t0 = time.time()
    ok = abs(metrics.latency_ms(808_000, 200e6) - 4.04) < 1e-9
    ok = ok and abs(metrics.mac_cycle_efficiency(289e6, 808_000, 768) - 46.6) <= 0.1
    m = metrics.fit_power_model(*metrics.POWER_POINTS["mobilenet_v2"])
    ok = ok and abs(metrics.predict_power(m, 30) - 30.5) < 1e-9
    ok = ok and abs(metrics.predict_power(m, 200) - 186.7) < 1e-9
    ok = ok and abs(metrics.area_efficiency(0.62, 48) - 12.9) / 12.9 < 0.02
    ok = ok and abs(metrics.area_efficiency(0.98, 124) - 7.9) / 7.9 < 0.02
    ok = ok and abs(metrics.area_efficiency(1.33, 262) - 5.1) / 5.1 < 0.02
    ok = ok and (time.time() - t0) < 1.0
    _verdict("metrics regression: latency/efficiency/power/area rows", ok)


def test_functional_soundness():
    t0 = time.time()
    cfg = j3dai_default()
    ok = True
    fixtures = [models.build_pointwise_fixture(), models.build_tiny_cnn(),
                models.build_overlap_fixture(),
                models.build_mobilenet_v1(0.25, (64, 48))]
    for i, g in enumerate(fixtures):
        good, _ = _bit_exact(g, cfg, seed=i)
        ok = ok and good
    for seed in range(100):
        good, _ = _bit_exact(random_graph(seed), cfg, seed=seed + 1000)
        ok = ok and good
    ok = ok and (time.time() - t0) < 300.0
    _verdict("functional soundness: fixtures + 100 random graphs bit-exact", ok)


def test_mapper_optimality():
    t0 = time.time()
    cfg = j3dai_default()
    graphs = [models.build_tiny_cnn(), models.build_pointwise_fixture(),
              models.build_overlap_fixture()]
    graphs += [random_graph(s) for s in range(17)]
    ok = len(graphs) >= 20
    for i, g in enumerate(graphs):
        qg, _ = quantize_fixture(g, seed=i)
        plan = plan_mapping(qg, cfg)
        check_fit(plan, cfg)
        best = brute_force_plan(qg, cfg)
        for lp in plan.layers:
            if (lp.bytes_moved, max(lp.issues)) != best[lp.layer_id]:
                ok = False
    ok = ok and (time.time() - t0) < 120.0
    _verdict("mapper optimality: 20 instances match brute force", ok)


def test_scheduler_masking():
    t0 = time.time()
    cfg = j3dai_default()
    qg, x = quantize_fixture(models.build_overlap_fixture(), seed=0)
    plan = plan_mapping(qg, cfg)
    over = scheduler.build_schedule(plan, cfg, allow_overlap=True)
    serial = scheduler.build_schedule(plan, cfg, allow_overlap=False)
    ok = over.makespan_cycles < serial.makespan_cycles
    prog, init, meta = __import__("j3dsim.codegen", fromlist=["x"]).emit_program(
        qg, plan, cfg, prefetch=over.prefetch)
    rep, _ = simulate(qg, x, prog, init, meta, cfg)
    ok = ok and rep.stalls["bank_conflict"] == 0
    ok = ok and (time.time() - t0) < 10.0
    _verdict("scheduler masking: overlapped < serialized, no bank conflicts", ok)


def test_end_to_end_efficiency():
    t0 = time.time()
    # full-size activations exceed the 5 MB L2; a 6 MB configuration is
    # used for this capacity study (documented in the README)
    cfg = with_l2_bytes(j3dai_default(), 4 * 1024 * 1024, 2 * 1024 * 1024)
    effs = {}
    for name, g in [("v1", models.build_mobilenet_v1(1.0, (256, 192))),
                    ("v2", models.build_mobilenet_v2((256, 192)))]:
        good, rep = _bit_exact(g, cfg, seed=3)
        effs[name] = mac_efficiency(rep, cfg) if good else -1.0
    ok = effs["v1"] >= 55.0 and 0 < effs["v2"] < effs["v1"]
    ok = ok and (time.time() - t0) < 900.0
    _verdict("end-to-end: MobileNetV1 eff %.1f%% >= 55%%, V2 %.1f%% below V1"
             % (effs["v1"], effs["v2"]), ok)


def test_determinism(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    ok = cli.main(["run-all", "--model", "tiny_cnn", "--out", a]) == 0
    ok = ok and cli.main(["run-all", "--model", "tiny_cnn", "--out", b]) == 0
    files = sorted(os.listdir(a)) if ok else []
    if ok:
        match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        ok = mismatch == [] and errors == []
    _verdict("determinism: run-all artifacts byte-identical across reruns", ok)
