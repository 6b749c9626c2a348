"""Build hook for the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and
falls back to the NumPy kernels at import time.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(["src/rbpinn/kernels/_ckernels.pyx"], language_level=3, quiet=True)
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"compiled kernels disabled: {exc}")


try:
    from setuptools.command.build_ext import build_ext

    class OptionalBuildExt(build_ext):
        def run(self):
            try:
                super().run()
            except Exception as exc:  # pragma: no cover
                print(f"compiled kernels not built: {exc}")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as exc:  # pragma: no cover
                print(f"compiled kernels not built: {exc}")

    cmdclass = {"build_ext": OptionalBuildExt}
except ImportError:  # pragma: no cover
    cmdclass = {}

setup(ext_modules=ext_modules, cmdclass=cmdclass)
