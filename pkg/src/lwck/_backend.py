"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``LWCK_PURE_PYTHON`` is set to a truthy value.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _select():
    if os.environ.get("LWCK_PURE_PYTHON", "").strip().lower() in ("1", "true", "yes"):
        return _pykernels
    return _ckernels if _ckernels is not None else _pykernels


kernels = _select()


def available():
    """Names of the backends importable in this process."""
    names = [_pykernels.NAME]
    if _ckernels is not None:
        names.append(_ckernels.NAME)
    return names


def get(name=None):
    if name is None:
        return kernels
    if name == _pykernels.NAME:
        return _pykernels
    if name == "cython" and _ckernels is not None:
        return _ckernels
    raise ValueError(f"kernel backend {name!r} not available")
