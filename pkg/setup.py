"""Build script for the optional compiled interpreter kernel.

The VM step loop in ``frontforge/vm/_kernel.py`` dominates mining runtime.
When Cython and a C compiler are available, this script compiles a verbatim
copy of that module as ``frontforge.vm._kernel_cy``; the engine prefers the
extension at import time and falls back to the pure-Python module
otherwise. Because both backends are built from the same source file, their
behavior is identical by construction.

Build in place with:

    python setup.py build_ext --inplace

The package installs and runs fine without the extension.
"""

import shutil
from pathlib import Path

from setuptools import setup

HERE = Path(__file__).parent
KERNEL = HERE / "src" / "frontforge" / "vm" / "_kernel.py"
KERNEL_CY = KERNEL.with_name("_kernel_cy.py")


def extension_modules():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not available; building without the compiled kernel")
        return []
    shutil.copyfile(KERNEL, KERNEL_CY)
    return cythonize(
        [str(KERNEL_CY)],
        compiler_directives={"language_level": "3"},
        quiet=True,
    )


setup(ext_modules=extension_modules())
