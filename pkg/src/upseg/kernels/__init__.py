"""Hot-kernel backend selection.

The compiled extension is preferred when importable; set UPSEG_KERNELS=python
to force the numpy fallback or UPSEG_KERNELS=ext to make a missing extension
a hard error. Both backends are bit-identical, so the choice only affects
speed (see benchmarks/bench_kernels.py).
"""

import os

import numpy as np

from . import _fallback

_requested = os.environ.get("UPSEG_KERNELS", "").strip().lower()

if _requested == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ext as _impl
        BACKEND = "ext"
    except ImportError:
        if _requested == "ext":
            raise
        _impl = _fallback
        BACKEND = "python"


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.im2col(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    return _impl.col2im(cols, tuple(x_shape), kh, kw, stride, pad)
