"""Builds the optional compiled simulator core.

The package works without the extension (a pure-Python core is selected at
import time), so a failed Cython build is downgraded to a warning.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "j3dsim.sim._core",
                ["src/j3dsim/sim/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    import warnings

    warnings.warn(f"compiled simulator core disabled: {exc}")

setup(ext_modules=ext_modules)
