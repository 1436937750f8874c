"""Build script. The Cython kernel extension is optional: when Cython or a C
compiler is unavailable the package installs anyway and falls back to the
pure-numpy kernels at import time."""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "facepool._kernels._native",
        ["src/facepool/_kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffp-contract=off keeps the native kernels bit-compatible with the
        # numpy fallback (no FMA contraction).
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    ext_modules = cythonize([ext], language_level="3")
except ImportError:
    pass

setup(ext_modules=ext_modules)
