import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "aggcox.kernels._speed",
                ["src/aggcox/kernels/_speed.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python fallback in aggcox.kernels keeps the package functional
    # without the compiled core.
    ext_modules = []

setup(ext_modules=ext_modules)
