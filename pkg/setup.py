"""Builds the optional compiled kernel extension.

The package works without it (a NumPy fallback is selected at import time),
so failure to cythonize is not fatal for `pip install`.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mvseg.kernels._core",
                ["src/mvseg/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
