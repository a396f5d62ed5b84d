"""Build script for the optional compiled histogram kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile degrades to the pure-Python build instead
of aborting the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "lumenstitch._kernels",
        ["src/lumenstitch/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"lumenstitch: skipping compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)
