"""Select the coordinate-descent kernel at import time.

The compiled Cython kernel is used when it was built; otherwise, or when the
environment variable ``THRESHREG_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the pure-Python kernel is used.
"""
import os

from . import _kernel_py

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None

KERNELS = {"python": _kernel_py.coordinate_descent}
if _kernel_c is not None:
    KERNELS["cython"] = _kernel_c.coordinate_descent

_force_py = os.environ.get("THRESHREG_PURE_PYTHON", "") not in ("", "0")
BACKEND = "cython" if (_kernel_c is not None and not _force_py) else "python"


def get_kernel(name: str | None = None):
    """Return the kernel callable named ``name`` (default: the selected backend)."""
    name = BACKEND if name is None else name
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"kernel {name!r} unavailable; have {sorted(KERNELS)}") from None
