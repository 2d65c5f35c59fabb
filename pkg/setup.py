# The compiled kernels are optional: without Cython (or a compiler) the
# package installs pure-Python and kinn.kernels falls back to numpy.
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("KINN_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "kinn._ckernels",
                    ["src/kinn/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
