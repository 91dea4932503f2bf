"""Operator-facing pipeline driver.

Stages mirror the export flow (import -> quantize -> map -> schedule ->
compile -> simulate -> report); each consumes the previous stage's
serialized artifact from the output directory and writes its own, so any
stage can be re-run or inspected in isolation. run-all chains them.

Exit codes: 0 success, 2 usage, 3 validation failure, 4 runtime failure.
Diagnostics go to stderr; artifacts only to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from j3dsim import codegen, config, container, ir, isa, metrics, models, scheduler
from j3dsim.layout import MapError
from j3dsim.mapper import MappingPlan, check_fit, plan_mapping
from j3dsim.oracle import OracleOverflow
from j3dsim.quantize import (
    calibrate,
    derive_quant_params,
    quantize_graph,
    quantize_input,
)
from j3dsim.sim import SimError, SimReport, mac_efficiency, runner

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4

_MODELS = {
    "mobilenet_v1": lambda a: models.build_mobilenet_v1(a.alpha, a.input_hw),
    "mobilenet_v2": lambda a: models.build_mobilenet_v2(a.input_hw),
    "tiny_cnn": lambda a: models.build_tiny_cnn(),
    "pointwise_fixture": lambda a: models.build_pointwise_fixture(),
    "overlap_fixture": lambda a: models.build_overlap_fixture(),
}


class StageError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _load_cfg(args) -> config.HardwareConfig:
    cfg = config.load(args.config) if args.config else config.j3dai_default()
    if args.clock_hz:
        from dataclasses import replace

        cfg = replace(cfg, clock_hz=args.clock_hz)
    bad = config.validate(cfg)
    if bad:
        raise StageError(EXIT_VALIDATION, "config: " + "; ".join(bad))
    return cfg


def _read(path: str, stage: str) -> str:
    if not os.path.exists(path):
        raise StageError(EXIT_VALIDATION, f"{stage}: missing input file {path!r}")
    with open(path) as f:
        return f.read()


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _load_graph(out: str, stem: str, stage: str) -> ir.GraphIR:
    text = _read(os.path.join(out, stem + ".json"), stage)
    man = os.path.join(out, stem + "_weights.json")
    weights = container.read_container(man) if os.path.exists(man) else None
    g = ir.import_json(text, weights)
    return ir.infer_shapes(g)


def _save_graph(out: str, stem: str, g: ir.GraphIR) -> None:
    _write(os.path.join(out, stem + ".json"), ir.export_json(g))
    if g.data:
        container.write_container(os.path.join(out, stem + "_weights"), dict(g.data))


def cmd_build_model(args) -> None:
    g = _MODELS[args.model](args)
    _save_graph(args.out, "model", g)


def cmd_import(args) -> None:
    text = _read(args.graph, "import")
    weights = container.read_container(args.weights) if args.weights else None
    try:
        g = ir.import_json(text, weights)
        g = ir.infer_shapes(g)
    except ir.IRError as exc:
        raise StageError(EXIT_VALIDATION, f"import: {exc}") from exc
    _save_graph(args.out, "graph", g)


def cmd_quantize(args) -> None:
    g = _load_graph(args.out, "graph", "quantize")
    rng = np.random.default_rng(args.seed)
    in_shape = g.tensors[g.inputs[0]].shape
    samples = [rng.standard_normal(in_shape).astype(np.float32)
               for _ in range(args.calib_samples)]
    qg = quantize_graph(g, derive_quant_params(calibrate(g, samples), g))
    _save_graph(args.out, "quantized", qg)


def cmd_map(args) -> None:
    g = _load_graph(args.out, "quantized", "map")
    cfg = _load_cfg(args)
    plan = plan_mapping(g, cfg)
    check_fit(plan, cfg)
    _write(os.path.join(args.out, "plan.json"), plan.to_json())


def cmd_schedule(args) -> None:
    g = _load_graph(args.out, "quantized", "schedule")
    del g  # stage only needs the plan; load validates the chain
    cfg = _load_cfg(args)
    plan = MappingPlan.from_json(_read(os.path.join(args.out, "plan.json"), "schedule"))
    sch = scheduler.build_schedule(plan, cfg, allow_overlap=not args.no_overlap)
    _write(os.path.join(args.out, "schedule.json"), sch.to_json())


def cmd_compile(args) -> None:
    g = _load_graph(args.out, "quantized", "compile")
    cfg = _load_cfg(args)
    plan = MappingPlan.from_json(_read(os.path.join(args.out, "plan.json"), "compile"))
    sch = scheduler.Schedule.from_json(
        _read(os.path.join(args.out, "schedule.json"), "compile"))
    prog, init, meta = codegen.emit_program(g, plan, cfg, prefetch=sch.prefetch)
    _write(os.path.join(args.out, "program.asm"), isa.disassemble(prog))
    with open(os.path.join(args.out, "program.bin"), "wb") as f:
        f.write(isa.encode(prog))
    container.write_container(
        os.path.join(args.out, "memory_init"),
        {k: np.asarray(v, dtype=np.uint8) for k, v in init.items()})
    _write(os.path.join(args.out, "meta.json"),
           json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _simulate(args):
    g = _load_graph(args.out, "quantized", "simulate")
    cfg = _load_cfg(args)
    prog = isa.assemble(_read(os.path.join(args.out, "program.asm"), "simulate"), cfg)
    init = container.read_container(os.path.join(args.out, "memory_init.json"))
    meta = json.loads(_read(os.path.join(args.out, "meta.json"), "simulate"))
    if args.input:
        values = container.read_container(args.input)
    else:
        rng = np.random.default_rng(args.seed + 1)
        values = {}
        for m in meta["inputs"]:
            x = rng.standard_normal(m["shape"]).astype(np.float32)
            values[m["name"]] = quantize_input(x, g.tensors[m["name"]].quant)
    init = dict(init)
    init["staging_in"] = codegen.pack_inputs(meta, values)
    state, rep = runner.run(prog, cfg, init, cycle_cap=args.cycle_cap)
    outs = codegen.unpack_outputs(meta, runner.read_region(prog, state, "staging_out"))
    container.write_container(os.path.join(args.out, "outputs"), outs)
    _write(os.path.join(args.out, "report.json"), rep.to_json())
    return rep


def cmd_simulate(args) -> None:
    _simulate(args)


def cmd_report(args) -> None:
    cfg = _load_cfg(args)
    rep = SimReport.from_json(_read(os.path.join(args.out, "report.json"), "report"))
    g = _load_graph(args.out, "quantized", "report")
    _, total_macs = ir.mac_count(g)
    in_shape = g.tensors[g.inputs[0]].shape
    row = metrics.workload_report(
        name=args.name, mac_total=total_macs, input_hw=(in_shape[2], in_shape[3]),
        total_cycles=rep.total_cycles, cfg=cfg,
        compare_clock_hz=262.5e6)
    row["simulated_mac_ops"] = rep.mac_ops_executed
    row["simulated_efficiency_pct"] = round(mac_efficiency(rep, cfg), 2)
    row["stalls"] = rep.stalls
    _write(os.path.join(args.out, "metrics.json"),
           json.dumps(row, indent=2, sort_keys=True) + "\n")
    _write(os.path.join(args.out, "metrics.txt"),
           metrics.render_report([{k: v for k, v in row.items() if k != "stalls"}]))


def cmd_run_all(args) -> None:
    if args.graph:
        cmd_import(args)
    else:
        g = _MODELS[args.model](args)
        _save_graph(args.out, "graph", g)
    cmd_quantize(args)
    cmd_map(args)
    cmd_schedule(args)
    cmd_compile(args)
    _simulate(args)
    cmd_report(args)


def _add_common(p):
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--config", help="hardware config JSON")
    p.add_argument("--clock-hz", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cycle-cap", type=int, default=50_000_000)
    p.add_argument("--calib-samples", type=int, default=4)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="j3dsim", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("build-model", help="emit a built-in model as IR + weights")
    p.add_argument("model", choices=sorted(_MODELS))
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--input-hw", type=lambda s: tuple(int(v) for v in s.split("x")),
                   default=(64, 48))
    _add_common(p)
    p.set_defaults(fn=cmd_build_model)

    p = sub.add_parser("import", help="validate an IR document")
    p.add_argument("graph")
    p.add_argument("--weights", help="weight container manifest")
    _add_common(p)
    p.set_defaults(fn=cmd_import)

    for name, fn in [("quantize", cmd_quantize), ("map", cmd_map),
                     ("schedule", cmd_schedule), ("compile", cmd_compile),
                     ("simulate", cmd_simulate), ("report", cmd_report)]:
        p = sub.add_parser(name)
        if name == "schedule":
            p.add_argument("--no-overlap", action="store_true")
        if name == "simulate":
            p.add_argument("--input", help="input tensor container manifest")
        if name == "report":
            p.add_argument("--name", default="workload")
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("run-all", help="chain every stage")
    p.add_argument("--graph", help="IR document (default: a built-in model)")
    p.add_argument("--weights")
    p.add_argument("--model", choices=sorted(_MODELS), default="tiny_cnn")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--input-hw", type=lambda s: tuple(int(v) for v in s.split("x")),
                   default=(64, 48))
    p.add_argument("--no-overlap", action="store_true")
    p.add_argument("--input")
    p.add_argument("--name", default="workload")
    _add_common(p)
    p.set_defaults(fn=cmd_run_all)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        args.fn(args)
        return EXIT_OK
    except StageError as exc:
        print(f"j3dsim {args.cmd}: {exc}", file=sys.stderr)
        return exc.code
    except (ir.IRError, MapError, isa.AsmError, ValueError) as exc:
        print(f"j3dsim {args.cmd}: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimError, OracleOverflow, OSError) as exc:
        print(f"j3dsim {args.cmd}: runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
