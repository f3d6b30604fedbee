"""Builds the optional compiled kernel extension.

The package works without it: pivotcap.kernels falls back to pure-NumPy
implementations when the extension is absent or PIVOTCAP_PURE=1 is set.
"""
from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pivotcap.kernels._ckernels",
                ["src/pivotcap/kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
