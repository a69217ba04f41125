"""Build hooks for the optional compiled kernel extension.

The package works without compilation: projdiff.kernels falls back to the
NumPy reference backend whenever the extension is absent, so any build
failure here is downgraded to a warning instead of failing the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; skipping compiled kernels")
        return []
    return cythonize(
        [
            Extension(
                "projdiff.kernels._speedups",
                ["src/projdiff/kernels/_speedups.pyx"],
            )
        ],
        language_level=3,
    )


class OptionalBuildExt(build_ext):
    """Build the extension if possible, fall back to pure Python if not."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({ext.name}): {exc}")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
