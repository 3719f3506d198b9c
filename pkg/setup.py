"""Build script for the optional compiled kernel core.

The package is pure Python plus one Cython extension holding the hot
kernels (planar kinematics, 2x2 SPD objective, guidance finite
differences). If the extension cannot be built the install still
succeeds and the package falls back to the numpy implementation at
import time.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build extensions, but do not fail the install if a build breaks."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"WARNING: compiled kernels skipped ({exc}); "
                  "falling back to pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"WARNING: building {ext.name} failed ({exc}); "
                  "falling back to pure Python")


def _extensions():
    pyx = os.path.join("src", "bimanip", "_kernels", "_speedups.pyx")
    if not os.path.exists(pyx):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build env without cython
        return []
    ext = Extension(
        "bimanip._kernels._speedups",
        [pyx],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
