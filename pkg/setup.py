import numpy as np
from setuptools import Extension, setup

# The compiled kernels are an optional accelerator: if Cython or a C
# compiler is missing the package still installs and falls back to the
# numpy backend at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "vesselseg._kernels._fast",
                [
                    "src/vesselseg/_kernels/_fast.pyx",
                    "src/vesselseg/_kernels/conv_planes.c",
                ],
                include_dirs=[np.get_include(), "src/vesselseg/_kernels"],
                extra_compile_args=[
                    "-O3",
                    "-march=native",
                    "-fopenmp",
                    "-ffp-contract=fast",
                ],
                extra_link_args=["-fopenmp"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
