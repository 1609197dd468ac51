"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy module.
``BSODH_BACKEND=python`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

try:  # pragma: no cover - depends on the build
    from . import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return a kernel module by name (default: environment / best available)."""
    if name is None:
        name = os.environ.get("BSODH_BACKEND") or ("cython" if "cython" in _BACKENDS else "python")
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None


def pack_codes(B):
    """Pack a ``k x n`` +/-1 code matrix into ``n x ceil(k/64)`` uint64 words."""
    B = np.asarray(B)
    k, n = B.shape
    words = max(1, -(-k // 64))
    bits = np.zeros((n, words * 64), dtype=bool)
    bits[:, :k] = (B > 0).T
    packed = np.packbits(bits, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64).reshape(n, words)
