"""Compare the compiled and pure-Python simulator cores on a real
workload (MobileNetV1 alpha=0.25 at 64x48) and verify they agree.

Usage: python3 benchmarks/bench_sim.py [--alpha A] [--hw HxW] [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import j3dsim.sim as simpkg
from j3dsim import codegen, models, scheduler
from j3dsim.config import j3dai_default
from j3dsim.mapper import check_fit, plan_mapping
from j3dsim.quantize import (
    calibrate,
    derive_quant_params,
    quantize_graph,
    quantize_input,
)
from j3dsim.sim import core_py, runner


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=0.25)
    ap.add_argument("--hw", type=lambda s: tuple(int(v) for v in s.split("x")),
                    default=(64, 48))
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = j3dai_default()
    g = models.build_mobilenet_v1(args.alpha, args.hw)
    rng = np.random.default_rng(7)
    in_name = g.inputs[0]
    samples = [rng.standard_normal(g.tensors[in_name].shape).astype(np.float32)
               for _ in range(2)]
    qg = quantize_graph(g, derive_quant_params(calibrate(g, samples), g))
    plan = plan_mapping(qg, cfg)
    check_fit(plan, cfg)
    sch = scheduler.build_schedule(plan, cfg)
    prog, init, meta = codegen.emit_program(qg, plan, cfg, prefetch=sch.prefetch)
    init["staging_in"] = codegen.pack_inputs(
        meta, {in_name: quantize_input(samples[0], qg.tensors[in_name].quant)})

    impls = [("python", core_py.run_clusters)]
    if simpkg.CORE_NAME == "compiled":
        impls.insert(0, ("compiled", simpkg.run_clusters_impl))
    saved = simpkg.run_clusters_impl
    results = {}
    try:
        for name, impl in impls:
            simpkg.run_clusters_impl = impl
            best = float("inf")
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                state, rep = runner.run(prog, cfg, dict(init))
                best = min(best, time.perf_counter() - t0)
            out = runner.read_region(prog, state, "staging_out")
            results[name] = (best, rep, out)
            print(f"{name:>9}: {best:8.3f} s  "
                  f"({rep.total_cycles / best / 1e3:8.1f} kcycle/s, "
                  f"{rep.total_cycles} cycles)")
    finally:
        simpkg.run_clusters_impl = saved

    if len(results) == 2:
        (tb, rb, ob), (tp, rp, op) = results["compiled"], results["python"]
        same = (np.array_equal(ob, op) and rb.total_cycles == rp.total_cycles
                and rb.mac_ops_executed == rp.mac_ops_executed
                and rb.stalls == rp.stalls)
        print(f"  speedup: {tp / tb:.1f}x   bit-identical: {same}")
    else:
        print("compiled core unavailable; ran pure-Python core only")


if __name__ == "__main__":
    main()
