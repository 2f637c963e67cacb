"""Opportunistic build of the compiled kernels lane.

The package is pure Python by contract; flushsim._kernels is written in
Cython pure-Python mode so the same source runs interpreted when no
compiler (or no Cython) is around. The extension is marked optional: a
failed build must never fail the install.
"""
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "flushsim._kernels",
                ["src/flushsim/_kernels.py"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
