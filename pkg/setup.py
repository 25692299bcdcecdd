"""Build script for the optional compiled path kernel.

The package is pure Python except for smalljumps._kernels, a Cython
translation of the per-path evolution loop.  If the extension fails to
build or import, the package falls back to the Python implementation in
smalljumps._kernels_py (see smalljumps.simulate).
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = cythonize(
    [
        Extension(
            "smalljumps._kernels",
            ["src/smalljumps/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    language_level=3,
)

setup(ext_modules=ext_modules)
