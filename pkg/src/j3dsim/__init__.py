"""Deployment toolchain and cycle-approximate simulator for a 3D-stacked
SIMD edge-AI accelerator.

Pipeline: import -> quantize -> map -> schedule -> compile -> simulate -> report.
"""

from j3dsim.config import HardwareConfig, j3dai_default, peak_macs_per_cycle

__version__ = "0.1.0"

__all__ = ["HardwareConfig", "j3dai_default", "peak_macs_per_cycle", "__version__"]
