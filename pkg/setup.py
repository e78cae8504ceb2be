"""Build script for the optional Cython kernels.

The package works without them: ``homoglab.kernels`` falls back to the
NumPy implementation when the extension is missing.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("HOMOGLAB_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        print("Cython/numpy not available; building pure-Python package only")
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "homoglab._ckernels",
                    ["src/homoglab/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
