import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "gazemanip.kernels._core",
    ["src/gazemanip/kernels/_core.pyx"],
    include_dirs=[np.get_include()],
    # -ffp-contract=off keeps the compiled kernels bit-identical to the
    # numpy fallback (no FMA contraction of a*b+c).
    extra_compile_args=["-O3", "-ffp-contract=off"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level="3"))
