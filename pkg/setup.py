"""Build script for the optional compiled coagulation kernel.

The package is fully functional without the extension: ``romuq._kernels``
falls back to a vectorized numpy implementation when the compiled module is
absent.  Any failure to build or cythonize therefore downgrades the install
to pure Python instead of aborting it.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        print(f"romuq: compiled kernel skipped ({exc})", file=sys.stderr)
        return []
    ext = Extension(
        "romuq._kernels._coagulation",
        ["src/romuq/_kernels/_coagulation.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


class optional_build_ext(build_ext):
    """Demote extension build errors to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"romuq: compiled kernel skipped ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"romuq: building {ext.name} failed ({exc}); "
                  "falling back to the pure-Python kernel", file=sys.stderr)


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
