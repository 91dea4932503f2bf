import filecmp
import json
import os

import numpy as np

from j3dsim import cli, container, ir, oracle
from j3dsim.quantize import quantize_input


def _run(*argv):
    return cli.main(list(argv))


def test_usage_error_exit_code(capsys):
    assert _run("frobnicate", "--out", "/tmp/x") == cli.EXIT_USAGE


def test_missing_artifact_is_validation_error(tmp_path, capsys):
    rc = _run("map", "--out", str(tmp_path))
    assert rc == cli.EXIT_VALIDATION
    assert "missing input file" in capsys.readouterr().err


def test_run_all_tiny_cnn(tmp_path):
    out = str(tmp_path / "a")
    assert _run("run-all", "--model", "tiny_cnn", "--out", out) == 0
    rep = json.loads(open(os.path.join(out, "report.json")).read())
    assert rep["total_cycles"] > 0

    # outputs must match the integer oracle on the same generated input
    qg = ir.import_json(
        open(os.path.join(out, "quantized.json")).read(),
        container.read_container(os.path.join(out, "quantized_weights.json")))
    qg = ir.infer_shapes(qg)
    meta = json.loads(open(os.path.join(out, "meta.json")).read())
    rng = np.random.default_rng(0 + 1)  # seed handling mirrors the CLI
    m = meta["inputs"][0]
    x = quantize_input(rng.standard_normal(m["shape"]).astype(np.float32),
                       qg.tensors[m["name"]].quant)
    ref = oracle.run_int(qg, {m["name"]: x})
    outs = container.read_container(os.path.join(out, "outputs.json"))
    for name, arr in outs.items():
        assert np.array_equal(arr, ref[name].astype(np.uint8)), name


def test_run_all_is_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run("run-all", "--model", "tiny_cnn", "--out", a) == 0
    assert _run("run-all", "--model", "tiny_cnn", "--out", b) == 0
    files = sorted(os.listdir(a))
    assert files == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert mismatch == [] and errors == []


def test_corrupt_assembly_reports_line(tmp_path, capsys):
    out = str(tmp_path / "a")
    assert _run("run-all", "--model", "pointwise_fixture", "--out", out) == 0
    asm = os.path.join(out, "program.asm")
    text = open(asm).read().replace("MAC", "MAQ", 1)
    open(asm, "w").write(text)
    rc = _run("simulate", "--out", out)
    assert rc == cli.EXIT_VALIDATION
    assert "line" in capsys.readouterr().err


def test_cycle_cap_is_runtime_error(tmp_path, capsys):
    out = str(tmp_path / "a")
    assert _run("run-all", "--model", "tiny_cnn", "--out", out) == 0
    rc = _run("simulate", "--out", out, "--cycle-cap", "3")
    assert rc == cli.EXIT_RUNTIME
    assert "cycle cap" in capsys.readouterr().err


def test_report_shows_reference_latency(tmp_path):
    out = str(tmp_path / "a")
    assert _run("run-all", "--model", "tiny_cnn", "--out", out) == 0
    rep_path = os.path.join(out, "report.json")
    rep = json.loads(open(rep_path).read())
    rep["total_cycles"] = 808_000
    open(rep_path, "w").write(json.dumps(rep))
    assert _run("report", "--out", out) == 0
    assert "4.04" in open(os.path.join(out, "metrics.txt")).read()


def test_stage_isolation_reproduces_artifacts(tmp_path):
    out = str(tmp_path / "a")
    assert _run("run-all", "--model", "tiny_cnn", "--out", out) == 0
    before = open(os.path.join(out, "plan.json")).read()
    assert _run("map", "--out", out) == 0
    assert open(os.path.join(out, "plan.json")).read() == before
