"""Build script: compiles the SOM training kernel unless SOMDAGMM_SKIP_EXT is set.

The package works without the extension (a numpy fallback is selected at
import time); skipping the build is useful on machines without a C toolchain:

    SOMDAGMM_SKIP_EXT=1 pip install -e . --no-build-isolation
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SOMDAGMM_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "somdagmm._som_core",
                    ["src/somdagmm/_som_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        print("somdagmm: Cython not available, building without the compiled SOM kernel")

setup(ext_modules=ext_modules)
