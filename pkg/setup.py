import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("GIBBSKIT_NO_EXT"):
    npy_random = os.path.join(os.path.dirname(np.__file__), "random", "lib")
    npy_math = os.path.join(os.path.dirname(np.__file__), "_core", "lib")
    ext = Extension(
        "gibbskit._core",
        ["src/gibbskit/_core.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[npy_random, npy_math],
        libraries=["npyrandom", "npymath", "m"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
