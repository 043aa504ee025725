"""Kernel backend selection.

The compiled extension is used when it imports; setting
``HJBNET_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from hjbnet import _kernels_py

if os.environ.get("HJBNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from hjbnet import _ckernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

value_grad = _impl.value_grad
value_grad_vjp = _impl.value_grad_vjp
interaction = _impl.interaction
gaussian_sum = _impl.gaussian_sum
softabs = _kernels_py.softabs


def backend_module(name):
    """Return the kernel module called ``name`` ("compiled" or "python")."""
    if name == "python":
        return _kernels_py
    from hjbnet import _ckernels
    return _ckernels
