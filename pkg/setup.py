"""Builds the optional compiled pivot kernel; the package works without it."""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("lpi._kernel", ["src/lpi/_kernel.pyx"])],
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
except Exception:  # no Cython or no compiler: pure-Python fallback
    ext_modules = []

setup(ext_modules=ext_modules)
