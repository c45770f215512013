"""Build script: compiles the optional text-kernel extension.

The package is fully functional without the extension; ``hnrefine.textkernels``
falls back to the pure-Python implementation when the compiled module is
missing (see benchmarks/bench_kernels.py for the speed difference).
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hnrefine.textkernels._native",
                ["src/hnrefine/textkernels/_native.pyx"],
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython at build time: ship pure-Python kernels only.
    pass

setup(ext_modules=ext_modules)
