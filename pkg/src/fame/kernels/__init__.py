"""Fuzzy-layer kernels with a compiled fast path.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_reference`` is used. Set ``FAME_PURE_PYTHON=1`` to
force the numpy path.
"""

import os

from . import _reference

try:
    if os.environ.get("FAME_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by FAME_PURE_PYTHON")
    from . import _ckernels
except ImportError:
    _ckernels = None

reference = _reference
compiled = _ckernels
default = _ckernels if _ckernels is not None else _reference


def get(name=None):
    """Return a kernel module: ``"numpy"``, ``"cython"`` or None for the default."""
    if name is None:
        return default
    if name == "numpy":
        return _reference
    if name == "cython":
        if _ckernels is None:
            raise ImportError("the compiled kernels are not available in this build")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
