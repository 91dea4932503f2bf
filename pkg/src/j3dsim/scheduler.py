"""Transfer scheduling: decide which layers' weights load during the
preceding layer's compute, and estimate the per-step makespan.

A layer's single weight descriptor can be issued inside the previous
layer's streams (right after its first SYNC) when:

  - the layer itself is prefetchable: one weight descriptor per cluster,
    targeting a dedicated SRAM bank;
  - the previous layer is maskable and does not ping-pong both top banks,
    so its compute never touches the target bank;
  - the target bank differs from the previous layer's own weight bank.

Under these rules the injected transfer can never collide with live data
or stall compute on a bank conflict; it only occupies otherwise-idle
engine time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from j3dsim.config import HardwareConfig
from j3dsim.layout import cdiv
from j3dsim.mapper import LayerPlan, MappingPlan


@dataclass
class StepSchedule:
    layer_id: str
    step: int
    compute_cycles: int  # worst-cluster instruction issues
    exposed_transfer_cycles: int  # engine time compute has to wait for
    hidden_transfer_cycles: int  # engine time overlapped with compute
    prefetches_next: bool = False

    @property
    def span(self) -> int:
        return self.compute_cycles + self.exposed_transfer_cycles


@dataclass
class Schedule:
    overlap: bool
    prefetch: set[str]
    steps: list[StepSchedule] = field(default_factory=list)

    @property
    def makespan_cycles(self) -> int:
        return sum(s.span for s in self.steps)

    def to_json(self) -> str:
        return json.dumps(
            {
                "overlap": self.overlap,
                "prefetch": sorted(self.prefetch),
                "makespan_cycles": self.makespan_cycles,
                "steps": [dict(s.__dict__) for s in self.steps],
            },
            indent=2,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "Schedule":
        d = json.loads(text)
        return Schedule(
            overlap=d["overlap"],
            prefetch=set(d["prefetch"]),
            steps=[StepSchedule(**s) for s in d["steps"]],
        )


def _can_prefetch(prev: LayerPlan, nxt: LayerPlan) -> bool:
    return (
        nxt.prefetchable
        and prev.maskable
        and not prev.uses_both_banks
        and (nxt.weight_bank != prev.weight_bank or prev.weight_bank < 0)
    )


def prefetch_set(plan: MappingPlan, cfg: HardwareConfig) -> set[str]:
    out: set[str] = set()
    for prev, nxt in zip(plan.layers, plan.layers[1:]):
        if _can_prefetch(prev, nxt):
            out.add(nxt.layer_id)
    return out


def build_schedule(plan: MappingPlan, cfg: HardwareConfig,
                   allow_overlap: bool = True) -> Schedule:
    """Order transfers against compute and estimate the makespan. With
    allow_overlap=False every transfer is exposed (no prefetch, no
    ping-pong credit); the result is a strict upper bound."""
    pref = prefetch_set(plan, cfg) if allow_overlap else set()
    engine_bpc = cfg.dmpa_width_bits // 8
    sched = Schedule(overlap=allow_overlap, prefetch=pref)
    for i, lp in enumerate(plan.layers):
        serial = lp.bytes_in + lp.bytes_fill + lp.bytes_out
        param = lp.bytes_param
        hidden = 0
        if allow_overlap and lp.layer_id in pref:
            hidden, param = param, 0
        elif allow_overlap and lp.uses_both_banks and lp.n_param_loads > 1:
            exposed = cdiv(lp.bytes_param, lp.n_param_loads)
            hidden, param = lp.bytes_param - exposed, exposed
        nxt = plan.layers[i + 1] if i + 1 < len(plan.layers) else None
        sched.steps.append(StepSchedule(
            layer_id=lp.layer_id,
            step=lp.step,
            compute_cycles=max(lp.issues) if lp.issues else 0,
            exposed_transfer_cycles=cdiv(serial + param, engine_bpc),
            hidden_transfer_cycles=cdiv(hidden, engine_bpc),
            prefetches_next=bool(nxt is not None and allow_overlap
                                 and nxt.layer_id in pref),
        ))
    return sched
