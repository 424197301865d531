from setuptools import Extension, setup
from Cython.Build import cythonize
import numpy

setup(
    ext_modules=cythonize(
        [Extension("cgkoop._kernels", sources=["src/cgkoop/_kernels.pyx"],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    ),
    include_dirs=[numpy.get_include()],
)
