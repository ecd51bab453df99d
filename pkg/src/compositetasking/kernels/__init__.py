"""Convolution kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
pure-numpy fallback is always available. Set CT_KERNELS=python or
CT_KERNELS=cython to force a backend (cython raises if the extension is
missing).
"""

import os

from . import _conv_py

conv_out_size = _conv_py.conv_out_size

try:
    from . import _conv_cy
except ImportError:
    _conv_cy = None


def _select():
    choice = os.environ.get("CT_KERNELS", "auto").lower()
    if choice == "python":
        return _conv_py
    if choice == "cython":
        if _conv_cy is None:
            raise ImportError("CT_KERNELS=cython but the compiled extension is not available")
        return _conv_cy
    return _conv_cy if _conv_cy is not None else _conv_py


_backend = _select()
im2col = _backend.im2col
col2im = _backend.col2im
BACKEND = "cython" if _backend is _conv_cy else "python"
