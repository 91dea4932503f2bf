from dataclasses import replace

import pytest

from j3dsim import config


def test_default_peak_macs():
    cfg = config.j3dai_default()
    assert config.peak_macs_per_cycle(cfg) == 768
    assert cfg.num_clusters * cfg.ncb_per_cluster * cfg.pes_per_ncb == 768


def test_default_l2_partitions():
    cfg = config.j3dai_default()
    assert cfg.l2_bytes == 5 * 1024 * 1024
    assert [p.die for p in cfg.l2_partitions] == ["bottom", "middle"]


def test_dmpa_matches_column_width():
    cfg = config.j3dai_default()
    assert cfg.dmpa_width_bits == cfg.ncb_per_cluster * cfg.ncb_bank_width_bits


def test_validate_accepts_default():
    assert config.validate(config.j3dai_default()) == []


@pytest.mark.parametrize("field,value", [
    ("num_clusters", 0),
    ("pes_per_ncb", -1),
    ("clock_hz", 0.0),
    ("chip_area_mm2", -2.0),
])
def test_validate_rejects_nonpositive(field, value):
    cfg = replace(config.j3dai_default(), **{field: value})
    assert any(field in msg for msg in config.validate(cfg))


def test_validate_rejects_mismatched_dmpa_width():
    cfg = replace(config.j3dai_default(), dmpa_width_bits=512)
    assert any("dmpa_width_bits" in m for m in config.validate(cfg))


def test_json_round_trip():
    cfg = config.with_l2_bytes(config.j3dai_default(), 4 << 20, 2 << 20)
    assert config.from_json(config.to_json(cfg)) == cfg


def test_from_json_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown config fields"):
        config.from_json('{"num_clusterz": 6}')


def test_with_l2_bytes():
    cfg = config.with_l2_bytes(config.j3dai_default(), 1024, 2048)
    assert cfg.l2_bytes == 3072
    assert config.j3dai_default().l2_bytes == 5 * 1024 * 1024
