from conftest import end_to_end, quantize_fixture
from j3dsim import models, scheduler
from j3dsim.mapper import plan_mapping


def test_overlap_beats_serialized_makespan(cfg):
    qg, _ = quantize_fixture(models.build_overlap_fixture(), seed=0)
    plan = plan_mapping(qg, cfg)
    over = scheduler.build_schedule(plan, cfg, allow_overlap=True)
    serial = scheduler.build_schedule(plan, cfg, allow_overlap=False)
    assert over.prefetch  # the second layer's weights are maskable
    assert over.makespan_cycles < serial.makespan_cycles


def test_overlap_beats_serialized_in_simulation(cfg):
    g = models.build_overlap_fixture()
    rep_over, sch_over, ok1 = end_to_end(g, cfg, overlap=True)
    rep_serial, sch_serial, ok2 = end_to_end(g, cfg, overlap=False)
    assert ok1 and ok2
    assert rep_over.total_cycles < rep_serial.total_cycles
    assert rep_over.stalls["bank_conflict"] == 0
    assert rep_serial.stalls["bank_conflict"] == 0


def test_prefetch_requires_maskable_predecessor(cfg):
    qg, _ = quantize_fixture(models.build_overlap_fixture(), seed=0)
    plan = plan_mapping(qg, cfg)
    pref = scheduler.prefetch_set(plan, cfg)
    assert pref <= {lp.layer_id for lp in plan.layers[1:]}
    for prev, nxt in zip(plan.layers, plan.layers[1:]):
        if nxt.layer_id in pref:
            assert nxt.prefetchable and prev.maskable
            assert not prev.uses_both_banks
            assert nxt.weight_bank != prev.weight_bank or prev.weight_bank < 0


def test_serialized_schedule_exposes_everything(cfg):
    qg, _ = quantize_fixture(models.build_overlap_fixture(), seed=0)
    plan = plan_mapping(qg, cfg)
    sch = scheduler.build_schedule(plan, cfg, allow_overlap=False)
    assert sch.prefetch == set()
    assert all(s.hidden_transfer_cycles == 0 for s in sch.steps)


def test_schedule_json_round_trip(cfg):
    qg, _ = quantize_fixture(models.build_tiny_cnn(), seed=0)
    plan = plan_mapping(qg, cfg)
    sch = scheduler.build_schedule(plan, cfg)
    sch2 = scheduler.Schedule.from_json(sch.to_json())
    assert sch2.to_json() == sch.to_json()
    assert sch2.makespan_cycles == sch.makespan_cycles
