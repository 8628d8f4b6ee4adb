"""Builds the optional compiled ray kernels.

If Cython or a C compiler is unavailable the package still installs; the
numpy fallback kernels are selected at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/gbt/_ray_core.pyx"],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
        ext.define_macros = [("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")]
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"warning: compiled kernels disabled ({exc}); using numpy fallback\n")
    ext_modules = []

setup(ext_modules=ext_modules)
