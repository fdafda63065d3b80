"""Build the optional compiled SSA kernel.

The package works without it: ``spnsurrogate.petri`` falls back to a
pure-Python kernel when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SPNSURROGATE_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "spnsurrogate._ssa_ext",
                    ["src/spnsurrogate/_ssa_ext.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
