import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: without Cython (or with
# COMMUTE_OD_NO_EXT=1) the package installs and runs on the pure-Python path.
ext_modules = []
if not os.environ.get("COMMUTE_OD_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "commute_od._kernels",
                    ["src/commute_od/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
