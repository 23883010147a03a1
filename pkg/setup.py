import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build without Cython falls back to numpy
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("QBEATS_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "qbeats._kernel",
                ["src/qbeats/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native", "-fcx-limited-range"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
