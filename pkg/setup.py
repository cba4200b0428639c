from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pure-Python install; the fallback kernel is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("threshreg._kernel", ["src/threshreg/_kernel.pyx"],
                   extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
