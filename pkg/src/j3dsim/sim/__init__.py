"""Simulator package; selects the compiled core when available.

Set J3DSIM_FORCE_PY=1 to force the pure-Python core (the two are
bit-identical; the compiled one is just faster).
"""

from __future__ import annotations

import os

from j3dsim.sim.core_py import SimError
from j3dsim.sim.core_py import run_clusters as _run_clusters_py

if os.environ.get("J3DSIM_FORCE_PY"):
    run_clusters_impl = _run_clusters_py
    CORE_NAME = "python"
else:
    try:
        from j3dsim.sim._core import run_clusters as run_clusters_impl

        CORE_NAME = "compiled"
    except ImportError:  # pragma: no cover - build environment dependent
        run_clusters_impl = _run_clusters_py
        CORE_NAME = "python"

from j3dsim.sim.runner import MachineState, SimReport, mac_efficiency, run

__all__ = [
    "run",
    "mac_efficiency",
    "SimReport",
    "MachineState",
    "SimError",
    "CORE_NAME",
    "run_clusters_impl",
]
