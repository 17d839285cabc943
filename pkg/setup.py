import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "hearken.kernels._core",
                sources=["src/hearken/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-fopenmp", "-fassociative-math", "-fno-signed-zeros", "-fno-trapping-math"],
                extra_link_args=["-fopenmp"],
            )
        ],
        compiler_directives={"language_level": 3},
    )

# Without Cython the package installs pure-Python; kernels fall back to numpy.
setup(ext_modules=extensions)
