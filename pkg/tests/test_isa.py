import pytest

from conftest import compile_graph, quantize_fixture
from j3dsim import isa, models
from j3dsim.config import j3dai_default


@pytest.fixture(scope="module")
def program():
    cfg = j3dai_default()
    qg, _ = quantize_fixture(models.build_tiny_cnn(), seed=0)
    _, _, prog, _, _ = compile_graph(qg, cfg)
    return prog


def test_agu_cfg_pads_to_four_dims():
    i = isa.agu_cfg(1, 100, (2, 3))
    assert i.op == "AGU"
    assert i.args == (1, 100, 2, 3, 0, 1, 0, 1, 0, 1)


def test_asm_round_trip(program):
    cfg = j3dai_default()
    text = isa.disassemble(program)
    p2 = isa.assemble(text, cfg)
    assert p2.clusters == program.clusters
    assert p2.descs == program.descs
    assert p2.host == program.host
    assert p2.regions == program.regions
    # and the text itself is a fixed point
    assert isa.disassemble(p2) == text


def test_binary_round_trip(program):
    blob = isa.encode(program)
    p2 = isa.decode(blob)
    assert p2.clusters == program.clusters
    assert p2.descs == program.descs
    assert p2.host == program.host
    assert p2.regions == program.regions


def test_assemble_reports_line_number():
    cfg = j3dai_default()
    bad = "\n".join([".cluster 0", "NOP", "FROB r0"])
    with pytest.raises(isa.AsmError, match="line 3"):
        isa.assemble(bad, cfg)


def test_check_desc_rejects_out_of_range():
    cfg = j3dai_default()
    d = isa.Desc(isa.DIR_L2S, 0, (0,), ((cfg.l2_bytes + 1, 1, 1),))
    assert isa.check_desc(d, cfg) is not None


def test_check_desc_rejects_sram_overrun():
    cfg = j3dai_default()
    d = isa.Desc(isa.DIR_L2S, cfg.ncb_sram_bytes - 4, (0,), ((8, 1, 1),))
    assert isa.check_desc(d, cfg) is not None


def test_check_desc_accepts_valid():
    cfg = j3dai_default()
    d = isa.Desc(isa.DIR_L2S, 0, (0, 16), ((64, 1, 1),))
    assert isa.check_desc(d, cfg) is None


def test_desc_total_bytes():
    d = isa.Desc(isa.DIR_L2S, 0, (0, 100), ((8, 1, 1), (4, 32, 8)))
    assert d.total_bytes == 2 * 8 * 4
