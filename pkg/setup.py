import numpy
from setuptools import Extension, setup

# The compiled round-loop kernel is optional: bitvolt.kernels falls back to
# the NumPy implementation when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "bitvolt.kernels._fastloop",
                sources=["src/bitvolt/kernels/_fastloop.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
