"""Build the optional Cython kinematics kernel.

If Cython or a C compiler is unavailable the package still installs and
falls back to the pure-Python kernels at import time.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    setup()
else:
    extensions = [
        Extension(
            "rvasim.kinematics._kernels",
            ["src/rvasim/kinematics/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
