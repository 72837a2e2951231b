"""Build script: compiles the Gauss-Seidel sweep kernel when Cython is present.

The package is fully functional without the extension -- `eqvi._kernels`
falls back to the pure-Python twin at import time.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/eqvi/_kernels/_gs.pyx",
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
