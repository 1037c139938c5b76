from setuptools import Extension, setup
from Cython.Build import cythonize

ext = Extension(
    "upseg.kernels._ext",
    ["src/upseg/kernels/_ext.pyx"],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize(ext, language_level=3))
