"""Shared helpers: quantize, plan, compile and simulate a graph, and
compare the simulated outputs against the integer reference."""

from __future__ import annotations

import numpy as np
import pytest

from j3dsim import codegen, oracle, scheduler
from j3dsim.config import j3dai_default
from j3dsim.mapper import check_fit, plan_mapping
from j3dsim.quantize import (
    calibrate,
    derive_quant_params,
    quantize_graph,
    quantize_input,
)
from j3dsim.sim import runner


@pytest.fixture
def cfg():
    return j3dai_default()


def quantize_fixture(g, seed=0, n_samples=3):
    """Calibrate on random data and return (qg, quantized input)."""
    rng = np.random.default_rng(seed)
    in_name = g.inputs[0]
    shape = g.tensors[in_name].shape
    samples = [rng.standard_normal(shape).astype(np.float32)
               for _ in range(n_samples)]
    qg = quantize_graph(g, derive_quant_params(calibrate(g, samples), g))
    x = quantize_input(samples[0], qg.tensors[in_name].quant)
    return qg, x


def compile_graph(qg, cfg, overlap=True):
    plan = plan_mapping(qg, cfg)
    check_fit(plan, cfg)
    sch = scheduler.build_schedule(plan, cfg, allow_overlap=overlap)
    prog, init, meta = codegen.emit_program(qg, plan, cfg, prefetch=sch.prefetch)
    return plan, sch, prog, init, meta


def simulate(qg, x, prog, init, meta, cfg, cycle_cap=50_000_000):
    init = dict(init)
    init["staging_in"] = codegen.pack_inputs(meta, {qg.inputs[0]: x})
    state, rep = runner.run(prog, cfg, init, cycle_cap=cycle_cap)
    outs = codegen.unpack_outputs(
        meta, runner.read_region(prog, state, "staging_out"))
    return rep, outs


def end_to_end(g, cfg, seed=0, overlap=True):
    """Full pipeline on one graph; returns (rep, sch, match_vs_oracle)."""
    qg, x = quantize_fixture(g, seed)
    plan, sch, prog, init, meta = compile_graph(qg, cfg, overlap=overlap)
    rep, outs = simulate(qg, x, prog, init, meta, cfg)
    ref = oracle.run_int(qg, {qg.inputs[0]: x})
    ok = all(np.array_equal(outs[n], ref[n].astype(np.uint8)) for n in outs)
    return rep, sch, ok
