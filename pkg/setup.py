"""Build script for the optional compiled mask kernels.

The Cython extension is skipped when Cython or a C compiler is unavailable;
``zsikit.maskgeom`` then falls back to its pure-Python kernels at import.
"""
import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    setup()
else:
    compiler_directives = {
        "language_level": 3,
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "initializedcheck": False,
        "embedsignature": True,
    }
    extensions = [
        Extension(
            "zsikit.maskgeom._ckernels",
            [os.path.join("src", "zsikit", "maskgeom", "_ckernels.pyx")],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    setup(ext_modules=cythonize(extensions, compiler_directives=compiler_directives))
