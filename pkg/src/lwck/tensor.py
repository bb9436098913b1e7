"""Dense tensor helpers and multilinear primitives.

Tensors and matrices are plain ``numpy.ndarray`` objects of dtype float64 in
C (row-major) order. Every function returns a fresh read-only array and never
mutates its inputs.

Unfolding convention: ``unfold(t, mode)`` has shape
``(t.shape[mode], prod(other dims))``, and its columns enumerate the remaining
modes in ascending order, row-major (the last remaining mode varies fastest).
All other modules share this convention.
"""
import numpy as np

__all__ = [
    "as_tensor",
    "frobenius_norm",
    "unfold",
    "refold",
    "khatri_rao",
    "reshape_kernel",
    "unreshape_kernel",
    "relative_error",
]


def _frozen(a):
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.flags.writeable = False
    return a


def as_tensor(data, dims=None):
    """Validate and freeze ``data`` as a float64 tensor.

    With ``dims`` given, ``data`` is taken as a flat row-major buffer.
    """
    a = np.asarray(data, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if a.size != int(np.prod(dims)):
            raise ValueError(f"data length {a.size} does not match dims {dims}")
        a = a.reshape(dims)
    if a.ndim < 1:
        raise ValueError("tensor order must be >= 1")
    if any(d < 1 for d in a.shape):
        raise ValueError(f"every dim must be >= 1, got {a.shape}")
    return _frozen(a)


def frobenius_norm(t):
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def _check_mode(t, mode):
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")


def unfold(t, mode):
    t = np.asarray(t, dtype=np.float64)
    _check_mode(t, mode)
    return _frozen(np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1))


def refold(m, mode, dims):
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    dims = tuple(dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for order-{len(dims)} tensor")
    rest = dims[:mode] + dims[mode + 1:]
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (dims[mode], int(np.prod(rest))):
        raise ValueError(f"matrix shape {m.shape} incompatible with dims {dims} at mode {mode}")
    return _frozen(np.moveaxis(m.reshape((dims[mode],) + rest), 0, mode))


def khatri_rao(a, b):
    """Column-wise Kronecker product; row index is ``i * b.rows + j``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column count mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _frozen((a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1]))


def reshape_kernel(k):
    """D x D x S x T kernel -> D^2 x S x T, spatial index ``j * D + i``."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 4:
        raise ValueError(f"kernel must be 4th-order, got order {k.ndim}")
    if k.shape[0] != k.shape[1]:
        raise ValueError(f"spatial dims must be equal, got {k.shape[:2]}")
    d, _, s, t = k.shape
    return _frozen(k.reshape(d * d, s, t))


def unreshape_kernel(k3):
    k3 = np.asarray(k3, dtype=np.float64)
    if k3.ndim != 3:
        raise ValueError(f"expected a 3rd-order tensor, got order {k3.ndim}")
    d = int(round(np.sqrt(k3.shape[0])))
    if d * d != k3.shape[0]:
        raise ValueError(f"first dim {k3.shape[0]} is not a perfect square")
    return _frozen(k3.reshape(d, d, k3.shape[1], k3.shape[2]))


def relative_error(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dims mismatch: {x.shape} vs {y.shape}")
    ref = frobenius_norm(x)
    if ref == 0.0:
        raise ValueError("reference tensor is zero")
    return frobenius_norm(x - y) / ref
