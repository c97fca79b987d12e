"""Build script: compiles the optional BM25 scoring kernel.

The extension is marked optional so installation succeeds on hosts without a
C toolchain; inter_ir.sparse falls back to the numpy scorer at import time.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "inter_ir._bm25_kernel",
                ["src/inter_ir/_bm25_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
    for ext in extensions:
        ext.optional = True
except ImportError:
    extensions = []

setup(ext_modules=extensions)
