"""Hot scan kernels with a compiled core and a pure-numpy fallback.

`adc_scan`, `adc_scan_flat` and `topk_update` resolve at import time to the
Cython extension when it was built, otherwise to the numpy implementations.
`get_backends()` exposes every available backend so tests and the benchmark
can compare them.
"""

from . import numpy_impl

try:
    from . import _adc_kernels as _compiled
except ImportError:
    _compiled = None

USING_COMPILED = _compiled is not None

if USING_COMPILED:
    adc_scan = _compiled.adc_scan
    adc_scan_flat = _compiled.adc_scan_flat
    topk_update = _compiled.topk_update
else:
    adc_scan = numpy_impl.adc_scan
    adc_scan_flat = numpy_impl.adc_scan_flat
    topk_update = numpy_impl.topk_update


def get_backends():
    """Return {name: module} for every usable kernel backend."""
    backends = {"numpy": numpy_impl}
    if USING_COMPILED:
        backends["compiled"] = _compiled
    return backends


__all__ = [
    "USING_COMPILED",
    "adc_scan",
    "adc_scan_flat",
    "topk_update",
    "get_backends",
]
