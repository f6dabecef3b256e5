"""Hot numeric kernels with a compiled fast path and a numpy fallback.

The compiled extension (Cython) is preferred when importable; setting the
environment variable MULTIBEAM_PURE_PYTHON=1 forces the numpy fallback.
``BACKEND`` reports which implementation is active.
"""

import os

from . import _ref

if os.environ.get("MULTIBEAM_PURE_PYTHON"):
    _impl = _ref
    BACKEND = "numpy"
else:
    try:
        from . import _fast as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "numpy"

pattern_amplitude = _impl.pattern_amplitude
sinc_taps = _impl.sinc_taps
sinc_matrix = _impl.sinc_matrix

__all__ = ["BACKEND", "pattern_amplitude", "sinc_taps", "sinc_matrix"]
