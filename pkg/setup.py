import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "pimann.kernels._adc_kernels",
        sources=["src/pimann/kernels/_adc_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# Without Cython the package still installs; pimann.kernels falls back to the
# numpy implementations at import time.
setup(ext_modules=cythonize(extensions, language_level="3") if cythonize else [])
