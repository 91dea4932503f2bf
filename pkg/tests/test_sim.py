import numpy as np
import pytest

import j3dsim.sim as simpkg
from conftest import compile_graph, quantize_fixture, simulate
from graph_gen import random_graph
from j3dsim import isa, models, oracle
from j3dsim.config import j3dai_default
from j3dsim.sim import core_py, decode, runner

I = isa.Instr


def _prog(cfg, stream, descs=None, host=None):
    clusters = [list(stream)] + [[] for _ in range(cfg.num_clusters - 1)]
    return isa.Program(cfg.num_clusters, clusters, descs or {}, host or [], {})


def test_halt_only_program_is_empty(cfg):
    _, rep = runner.run(_prog(cfg, [I("HALT")]), cfg)
    assert rep.total_cycles == 0
    assert rep.mac_ops_executed == 0
    assert all(v == 0 for v in rep.stalls.values())


def test_dmpa_cycle_costs(cfg):
    # 1024 bits move in one cycle; 10^6 bits in ceil(1e6/1024) = 977
    d1 = isa.Desc(isa.DIR_L2S, 0, (0,), ((128, 1, 1),))
    d2 = isa.Desc(isa.DIR_L2S, 0, tuple(range(10)), ((12500, 1, 1),))
    assert d1.total_bytes * 8 == 1024
    assert d2.total_bytes * 8 == 10 ** 6
    p = _prog(cfg, [I("DMPA", (0,)), I("DMPA", (1,)), I("HALT")],
              descs={0: d1, 1: d2})
    _, meta, _, _, _ = decode.decode_program(p, cfg)
    assert meta[0, 7] == 1
    assert meta[1, 7] == 977


def test_dma_is_16x_slower_than_dmpa(cfg):
    n = 1280  # bytes
    dmpa_cycles = -(-n * 8 // cfg.dmpa_width_bits)
    p = isa.Program(cfg.num_clusters, [[] for _ in range(cfg.num_clusters)],
                    host=[isa.HostCmd("dma", (4096, 0, n)),
                          isa.HostCmd("wait", ("dma",))])
    _, rep = runner.run(p, cfg)
    assert rep.total_cycles == -(-n * 8 // cfg.interconnect_width_bits)
    assert rep.total_cycles == 16 * dmpa_cycles


def test_sync_waits_for_dmpa(cfg):
    d = isa.Desc(isa.DIR_L2S, 0, tuple(range(16)), ((256, 1, 1),))  # 32 cy
    p = _prog(cfg, [I("DMPA", (0,)), I("SYNC", (isa.SYNC_DMPA,)), I("HALT")],
              descs={0: d})
    _, rep = runner.run(p, cfg)
    # issue at cycle 0, engine busy 32 cycles, release at 32, retire at 33
    assert rep.total_cycles == 33
    assert rep.stalls["sync"] == 31


def test_bank_conflict_stalls_only_on_overlap(cfg):
    # transfer lands in bank 0; compute in bank 0 stalls, bank 3 does not
    d = isa.Desc(isa.DIR_L2S, 0, tuple(range(16)), ((1024, 1, 1),))  # 128 cy
    for base, expect in ((0, True), (3 * cfg.ncb_bank_bytes, False)):
        p = _prog(cfg, [
            I("DMPA", (0,)),
            isa.agu_cfg(0, base, (1, 64)),
            I("LOOP", (64,)), I("LD8", (0, 0, 1)), I("ENDL"),
            I("SYNC", (isa.SYNC_DMPA,)), I("HALT"),
        ], descs={0: d})
        _, rep = runner.run(p, cfg)
        assert (rep.stalls["bank_conflict"] > 0) == expect


def test_accumulator_overflow_is_sticky(cfg):
    p = _prog(cfg, [
        I("LDACC", (isa.SRC_IMM, 0, 0, 2 ** 31 - 1)),
        I("MAC", (isa.SRC_IMM, 0, 0, 0, 2, isa.SRC_IMM, 0, 0, 0, 1)),
        I("HALT"),
    ])
    _, rep = runner.run(p, cfg)
    assert rep.accumulator_overflow


def test_determinism(cfg):
    qg, x = quantize_fixture(models.build_tiny_cnn(), seed=1)
    plan, sch, prog, init, meta = compile_graph(qg, cfg)
    r1, o1 = simulate(qg, x, prog, init, meta, cfg)
    r2, o2 = simulate(qg, x, prog, init, meta, cfg)
    assert r1.to_json() == r2.to_json()
    assert all(np.array_equal(o1[k], o2[k]) for k in o1)


@pytest.mark.parametrize("seed", [None, 2, 17, 31])
def test_compiled_core_matches_python_core(cfg, seed):
    if simpkg.CORE_NAME != "compiled":
        pytest.skip("compiled core not built")
    g = models.build_tiny_cnn() if seed is None else random_graph(seed)
    qg, x = quantize_fixture(g, seed=seed or 0)
    plan, sch, prog, init, meta = compile_graph(qg, cfg)
    saved = simpkg.run_clusters_impl
    try:
        results = []
        for impl in (saved, core_py.run_clusters):
            simpkg.run_clusters_impl = impl
            results.append(simulate(qg, x, prog, init, meta, cfg))
    finally:
        simpkg.run_clusters_impl = saved
    (r1, o1), (r2, o2) = results
    assert r1.to_json() == r2.to_json()
    assert set(o1) == set(o2)
    assert all(np.array_equal(o1[k], o2[k]) for k in o1)


def test_per_layer_cycles_cover_run(cfg):
    qg, x = quantize_fixture(models.build_tiny_cnn(), seed=1)
    plan, sch, prog, init, meta = compile_graph(qg, cfg)
    rep, _ = simulate(qg, x, prog, init, meta, cfg)
    covered = sum(rep.per_layer.values())
    # host-side staging DMA is outside the marker windows
    host_dma = rep.engine_busy["dma"]
    assert covered <= rep.total_cycles
    assert covered >= rep.total_cycles - host_dma
    assert set(rep.per_layer) >= {i + 1 for i in range(len(plan.layers))}


def test_watchdog_trips(cfg):
    p = _prog(cfg, [I("LOOP", (10_000,)), I("NOP"), I("ENDL"), I("HALT")])
    with pytest.raises(simpkg.SimError, match="cycle cap"):
        runner.run(p, cfg, cycle_cap=100)


def test_mac_efficiency_rejects_zero_cycles(cfg):
    rep = runner.SimReport(0, 0, {}, {})
    with pytest.raises(ValueError):
        runner.mac_efficiency(rep, cfg)
