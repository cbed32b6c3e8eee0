"""Kernel backend selection.

The compiled extension is used when it importable; otherwise the NumPy
implementation takes over with identical semantics. Set ``STSC_KERNELS``
to ``numpy`` or ``native`` before import to force a choice (forcing
``native`` fails loudly when the extension is missing rather than
silently degrading).
"""

import os

import numpy as np

from . import numpy_backend

_requested = os.environ.get("STSC_KERNELS", "").strip().lower()
if _requested not in ("", "numpy", "native"):
    raise ImportError(f"unknown STSC_KERNELS value: {_requested!r}")

native_backend = None
if _requested != "numpy":
    try:
        from . import _native as native_backend
    except ImportError:
        native_backend = None

if _requested == "native" and native_backend is None:
    raise ImportError("STSC_KERNELS=native but the compiled extension is not available")

_impl = native_backend if native_backend is not None else numpy_backend


def backend_name():
    """Name of the active backend, 'native' or 'numpy'."""
    return "native" if _impl is native_backend else "numpy"


def available_backends():
    names = ["numpy"]
    if native_backend is not None:
        names.insert(0, "native")
    return names


def set_backend(name):
    """Switch the active backend at runtime (used by tests and benchmarks)."""
    global _impl
    if name == "numpy":
        _impl = numpy_backend
    elif name == "native":
        if native_backend is None:
            raise ValueError("compiled extension is not available")
        _impl = native_backend
    else:
        raise ValueError(f"unknown backend: {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gather(xpad, w, sh, sw):
    return _impl.gather(_c(xpad), _c(w), sh, sw)


def scatter(dy, w, sh, sw, hp, wp):
    return _impl.scatter(_c(dy), _c(w), sh, sw, hp, wp)


def patch_outer(xpad, dy, sh, sw, kh, kw):
    return _impl.patch_outer(_c(xpad), _c(dy), sh, sw, kh, kw)
