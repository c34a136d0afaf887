"""Dense complex and real matrices.

Matrices are plain numpy arrays: ``complex128``/``complex64`` for k-space and
complex images, ``float64``/``float32`` for magnitude images. Leading batch
axes are allowed; the last two axes are (rows, cols).
"""

import numpy as np

from .errors import ShapeError


def as_complex_matrix(data, rows=None, cols=None):
    """Build a complex matrix from a nested list, array, or flat interleaved buffer.

    A flat real buffer of length ``2 * rows * cols`` is read as row-major
    interleaved (real, imag) pairs.
    """
    arr = np.asarray(data)
    if rows is not None and cols is not None:
        if not np.iscomplexobj(arr) and arr.size == 2 * rows * cols:
            arr = arr.astype(np.float64).reshape(rows, cols, 2)
            arr = arr[..., 0] + 1j * arr[..., 1]
        else:
            if arr.size != rows * cols:
                raise ShapeError(f"expected {rows * cols} entries, got {arr.size}")
            arr = arr.reshape(rows, cols)
    if arr.ndim < 2 or arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise ShapeError(f"matrix needs rows >= 1 and cols >= 1, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        return arr
    return arr.astype(np.complex128)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")


def complex_hadamard(a, b):
    """Elementwise complex product of two equally sized matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    return a * b


def magnitude(a):
    """Elementwise modulus sqrt(re^2 + im^2)."""
    return np.abs(np.asarray(a))


def interleave(a):
    """Complex array -> real array with a trailing (real, imag) axis."""
    a = np.asarray(a)
    out = np.empty(a.shape + (2,), dtype=np.float32 if a.dtype == np.complex64 else np.float64)
    out[..., 0] = a.real
    out[..., 1] = a.imag
    return out


def deinterleave(a):
    """Inverse of :func:`interleave`."""
    a = np.asarray(a)
    if a.shape[-1] != 2:
        raise ShapeError(f"trailing axis must have length 2, got {a.shape}")
    return a[..., 0] + 1j * a[..., 1]
