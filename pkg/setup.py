import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ADANAS_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext = Extension(
            "adanas.autograd._ckernels",
            ["src/adanas/autograd/_ckernels.pyx"],
            depends=["src/adanas/autograd/_conv_tiles.h"],
            include_dirs=[np.get_include(), "src/adanas/autograd"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"] + ([] if os.environ.get("ADANAS_PORTABLE") == "1" else ["-march=native"]),
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
