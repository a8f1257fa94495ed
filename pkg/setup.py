"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    if not os.path.exists("src/copssm/_core/_kernels.pyx"):
        cythonize = None
    if cythonize is None:
        ext_modules = []
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "copssm._core._kernels",
                    ["src/copssm/_core/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
