"""Build script for the optional compiled kernels.

The extension is marked optional: if the compiler is missing the package
still installs and runs on the numpy kernels.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "floodfuse.kernels._ckernels",
                ["src/floodfuse/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math / -march=native: results must match the numpy path bit for bit
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
