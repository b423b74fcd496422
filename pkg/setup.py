"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "spawnwatch._kernels._native",
                sources=["src/spawnwatch/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    import sys

    print(f"spawnwatch: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
