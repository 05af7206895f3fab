"""Build shim: compiles the optional Cython kernel extension.

The package works without the extension (a vectorized numpy fallback is
selected at import time); the compiled core exists for the hot loops.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "punavs._kernels",
                sources=["src/punavs/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off: no FMA contraction, so results stay
                # bit-identical to the numpy fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
