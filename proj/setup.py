"""Build shim: compiles the _core extension through the project's CMake.

The CMake build is the single source of truth for compiler flags and the
core library; this just drives it and drops the resulting module where
setuptools expects it (inside python/mosfit for editable installs).
"""

import shutil
import subprocess
import sys
from pathlib import Path

import pybind11
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = Path(__file__).resolve().parent


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)
        subprocess.run(
            [
                "cmake",
                str(ROOT),
                "-DMOSFIT_PYTHON=ON",
                "-DCMAKE_BUILD_TYPE=Release",
                f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            cwd=build_dir,
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_core"],
            cwd=build_dir,
            check=True,
        )

        built = list((build_dir / "python" / "mosfit").glob("_core.*.so"))
        if not built:
            raise RuntimeError("cmake did not produce the _core module")
        target = Path(self.get_ext_fullpath(ext.name)).resolve()
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[0], target)


setup(
    ext_modules=[CMakeExtension("mosfit._core")],
    cmdclass={"build_ext": CMakeBuild},
)
