import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3", "-fopenmp", "-fassociative-math", "-fno-signed-zeros",
                "-fno-trapping-math"]
if not os.environ.get("SSCNET_PORTABLE"):
    compile_args.append("-march=native")

extensions = [
    Extension(
        "sscnet.tensorops._ckernels",
        ["src/sscnet/tensorops/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=["-fopenmp"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
