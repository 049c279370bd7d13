"""Hot welfare-objective kernels: compiled extension with a numpy fallback.

The compiled module is selected at import time when available; set the
environment variable RANDPOLICY_PURE=1 to force the numpy implementation.
Both implementations share the contracts documented in `_pure`.
"""
import os

from . import _pure

if os.environ.get("RANDPOLICY_PURE"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _pure

IMPLEMENTATION = getattr(_impl, "IMPLEMENTATION", "pure")

softmax_objective = _impl.softmax_objective
gaussian_objective = _impl.gaussian_objective

pure_softmax_objective = _pure.softmax_objective
pure_gaussian_objective = _pure.gaussian_objective
