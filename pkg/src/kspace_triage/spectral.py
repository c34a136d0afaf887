"""Unitary 2-D discrete Fourier transforms and center shifts.

Power-of-two lengths use an iterative radix-2 Cooley-Tukey scheme seeded with
a small dense DFT block; every other length goes through Bluestein's chirp-z
algorithm on a power-of-two grid. Transforms act on the last two axes, so any
number of leading batch axes is supported.

K-space is stored DC-centered throughout the package. ``dft2`` itself uses
standard indexing (origin at element 0); callers move between the two
conventions with ``center_shift``.
"""

import enum
from functools import lru_cache

import numpy as np

_BLOCK = 64


class TransformDirection(enum.Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


def _is_inverse(direction):
    if isinstance(direction, TransformDirection):
        return direction is TransformDirection.INVERSE
    if direction in ("forward", "inverse"):
        return direction == "inverse"
    raise ValueError(f"unknown transform direction {direction!r}")


@lru_cache(maxsize=None)
def _dft_matrix(n, inverse, dtype):
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n).astype(dtype)


@lru_cache(maxsize=None)
def _twiddles(m, inverse, dtype):
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 1j * np.pi * np.arange(m) / m).astype(dtype)[:, None]


def _fft_pow2(x, inverse):
    # x: (batch, n) contiguous, n a power of two
    batch, n = x.shape
    block = min(n, _BLOCK)
    stride = n // block
    dense = _dft_matrix(block, inverse, x.dtype)
    if stride == 1:
        return x @ dense.T
    # column l of the reshaped array is the subsequence x[l::stride]
    sub = x.reshape(batch, block, stride).transpose(0, 2, 1).reshape(-1, block)
    out = (sub @ dense.T).reshape(batch, stride, block).transpose(0, 2, 1)
    while out.shape[1] < n:
        m = out.shape[1]
        half = out.shape[2] // 2
        even = out[:, :, :half]
        odd = out[:, :, half:] * _twiddles(m, inverse, x.dtype)
        out = np.concatenate([even + odd, even - odd], axis=1)
    return out.reshape(batch, n)


@lru_cache(maxsize=None)
def _chirp(n, inverse, dtype):
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    # k^2 mod 2n keeps the phase argument small for large k
    w = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1 << (2 * n - 2).bit_length()
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    b_hat = _fft_pow2(b[None, :], False)[0]
    return w.astype(dtype), b_hat.astype(dtype), m


def _fft_bluestein(x, inverse):
    batch, n = x.shape
    w, b_hat, m = _chirp(n, inverse, x.dtype)
    a = np.zeros((batch, m), dtype=x.dtype)
    a[:, :n] = x * w
    conv = _fft_pow2(_fft_pow2(a, False) * b_hat, True) / m
    return conv[:, :n] * w


def _fft_rows(flat, inverse):
    n = flat.shape[-1]
    if n == 1:
        return flat.copy()
    if n & (n - 1) == 0:
        return _fft_pow2(flat, inverse)
    return _fft_bluestein(flat, inverse)


def fft(x, axis=-1, inverse=False):
    """Unnormalized 1-D DFT along ``axis`` (inverse uses the +i kernel, no 1/n)."""
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        x = x.astype(np.complex128)
    n = x.shape[axis]
    if n <= _BLOCK and n & (n - 1) == 0 and x.ndim >= 2 and axis in (-2, x.ndim - 2):
        # dense transform applied from the left; avoids a transposed copy
        return np.matmul(_dft_matrix(n, inverse, x.dtype), x)
    moved = np.moveaxis(x, axis, -1)
    flat = np.ascontiguousarray(moved).reshape(-1, n)
    out = _fft_rows(flat, inverse)
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def dft2(x, direction=TransformDirection.FORWARD):
    """Unitary 2-D DFT over the last two axes.

    Both directions carry a 1/sqrt(rows*cols) factor, so the inverse undoes the
    forward transform exactly and energy is preserved. Complex64 input stays
    complex64; everything else is promoted to complex128.
    """
    inverse = _is_inverse(direction)
    x = np.asarray(x)
    if x.dtype != np.complex64:
        x = x.astype(np.complex128)
    rows, cols = x.shape[-2:]
    out = fft(fft(x, axis=-1, inverse=inverse), axis=-2, inverse=inverse)
    return out * x.real.dtype.type(1.0 / np.sqrt(rows * cols))


def center_shift(x, inverse=False):
    """Cyclically move the zero-frequency entry to (floor(r/2), floor(c/2)).

    ``inverse=True`` undoes the shift for odd as well as even sizes.
    """
    x = np.asarray(x)
    rows, cols = x.shape[-2:]
    shift = (rows // 2, cols // 2)
    if inverse:
        shift = (-shift[0], -shift[1])
    return np.roll(x, shift, axis=(-2, -1))


def kspace_to_image(kspace):
    """DC-centered k-space -> complex image."""
    return dft2(center_shift(kspace, inverse=True), TransformDirection.INVERSE)


def image_to_kspace(image):
    """Complex image -> DC-centered k-space."""
    return center_shift(dft2(image, TransformDirection.FORWARD))
