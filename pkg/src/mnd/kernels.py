"""Backend selection for the hot convolution/pooling kernels.

The compiled Cython module is used when it was built; otherwise the numpy
reference implementation is used. Set ``MND_PURE_PYTHON=1`` to force the
fallback (the benchmark and the parity tests do this).
"""

import os

from . import _kernels_py

_FORCE_PY = os.environ.get("MND_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PY:
        raise ImportError("pure python backend forced")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


im2col = _impl.im2col
col2im = _impl.col2im
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
