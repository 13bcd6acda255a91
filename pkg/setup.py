"""Build script for the optional compiled propagation core.

The package works without the extension (a pure-NumPy engine is selected at
import time); building it just makes trajectory propagation much faster.
"""
import sys

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "npsim._engine._core",
        ["src/npsim/_engine/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(
        "npsim: skipping compiled engine (%s); pure-Python fallback will be used\n" % exc
    )

setup(ext_modules=ext_modules)
