"""Kernel backend selection.

The compiled extension (``_fast``) is preferred; the numpy backend is the
fallback.  ``VESSELSEG_BACKEND=numpy`` forces the fallback,
``VESSELSEG_BACKEND=compiled`` makes a missing extension a hard error.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

_requested = os.environ.get("VESSELSEG_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "numpy"):
    raise ValueError(f"VESSELSEG_BACKEND must be 'compiled' or 'numpy', got {_requested!r}")

if _requested in ("", "compiled"):
    try:
        from . import _fast
    except ImportError:
        if _requested == "compiled":
            raise
        _fast = None
else:
    _fast = None

BACKEND = "compiled" if _fast is not None else "numpy"


def conv3d_fwd(x, w, b, stride=1):
    k = w.shape[2]
    if _fast is not None and k == 3:
        xc = np.ascontiguousarray(x)
        xp = np.pad(xc, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
        do = (x.shape[2] - 1) // stride + 1
        ho = (x.shape[3] - 1) // stride + 1
        wo = (x.shape[4] - 1) // stride + 1
        return _fast.conv3d_fwd_k3(xp, np.ascontiguousarray(w),
                                   np.ascontiguousarray(b), stride, do, ho, wo)
    return numpy_backend.conv3d_fwd(x, w, b, stride)


def conv3d_bwd(x, w, gy, stride=1):
    """Returns (gx, gw, gb) for conv3d_fwd."""
    k = w.shape[2]
    gb = gy.sum(axis=(0, 2, 3, 4))
    if _fast is not None and k == 3:
        xp = np.pad(np.ascontiguousarray(x),
                    ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
        gx, gw = _fast.conv3d_bwd_k3(
            xp, np.ascontiguousarray(w), np.ascontiguousarray(gy), stride,
            x.shape[2], x.shape[3], x.shape[4])
        return gx, gw, gb
    gx, gw = numpy_backend.conv3d_bwd(x, w, gy, stride)
    return gx, gw, gb


def maxpool3_fwd(x):
    if _fast is not None:
        return _fast.maxpool3_fwd(np.ascontiguousarray(x))
    return numpy_backend.maxpool3_fwd(x)


def maxpool3_bwd(code, gy):
    if _fast is not None:
        return _fast.maxpool3_bwd(np.ascontiguousarray(code),
                                  np.ascontiguousarray(gy))
    return numpy_backend.maxpool3_bwd(code, gy)


def thin_subiter(img, cand):
    if _fast is not None:
        return _fast.thin_subiter(img, cand)
    return numpy_backend.thin_subiter(img, cand)
