"""Iterative radix-2 Cooley-Tukey FFT on numpy arrays.

Only power-of-two lengths are supported. Transforms are unitary: both the
forward and inverse 2D transforms scale by ``1/sqrt(H*W)``.
"""

from functools import lru_cache

import numpy as np

from .errors import UnsupportedSizeError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size, inverse):
    sign = 1.0 if inverse else -1.0
    tw = np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)
    tw.setflags(write=False)
    return tw


def fft_last_axis(a, inverse=False):
    """Unnormalized DFT along the last axis of a complex array."""
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise UnsupportedSizeError(f"FFT length {n} is not a power of two")
    lead = a.shape[:-1]
    out = np.asarray(a, dtype=np.complex128)[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size, inverse)
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return out


def fft2c(a, inverse=False):
    """Unitary 2D DFT over the last two axes of a complex array."""
    h, w = a.shape[-2:]
    for n in (h, w):
        if not is_power_of_two(n):
            raise UnsupportedSizeError(f"FFT size {h}x{w} is not a power of two")
    out = fft_last_axis(a, inverse)
    out = fft_last_axis(np.swapaxes(out, -1, -2), inverse)
    out = np.swapaxes(out, -1, -2)
    return out / np.sqrt(h * w)


def fft2_channels(x, inverse=False):
    """Unitary 2D DFT of a real array whose axis -3 holds (real, imag)."""
    if x.shape[-3] != 2:
        raise UnsupportedSizeError(f"expected 2 channels at axis -3, got shape {x.shape}")
    z = x[..., 0, :, :] + 1j * x[..., 1, :, :]
    out = fft2c(z, inverse)
    return np.stack([out.real, out.imag], axis=-3).astype(x.dtype, copy=False)
