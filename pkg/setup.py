import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off is load-bearing: the compiled kernels must round every
# multiply and add separately to stay bit-identical with the numpy backend.
extensions = [
    Extension(
        "attnlab._native",
        ["src/attnlab/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
