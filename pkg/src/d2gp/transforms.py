"""Orthonormal 2D transforms, as plain numpy functions and as tape ops.

Conventions: DCT-II/III with norm='ortho'; unitary 2D DFT carried on a
real/imaginary channel pair (no native complex tensors); Sylvester
Walsh-Hadamard transform with an optional sequency reordering. FFT and
Hadamard require power-of-two spatial sizes.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from . import tensor as T
from .errors import ShapeError


def _check_pow2(n, what):
    if n < 1 or (n & (n - 1)) != 0:
        raise ShapeError(f"{what}: size {n} is not a power of two")


# ---- numpy-level kernels ---------------------------------------------------

def dct2_np(x):
    return dctn(x, type=2, norm="ortho", axes=(-2, -1))


def idct2_np(x):
    return idctn(x, type=2, norm="ortho", axes=(-2, -1))


def fft2_pair_np(x):
    """Unitary FFT2 of a channel pair (..., 2, H, W) -> (..., 2, H, W)."""
    z = x[..., 0, :, :] + 1j * x[..., 1, :, :]
    Z = np.fft.fft2(z, norm="ortho")
    return np.stack([Z.real, Z.imag], axis=-3)


def ifft2_pair_np(x):
    z = x[..., 0, :, :] + 1j * x[..., 1, :, :]
    Z = np.fft.ifft2(z, norm="ortho")
    return np.stack([Z.real, Z.imag], axis=-3)


def fwht_np(x):
    """Unnormalized Sylvester (natural-order) WHT along the last axis."""
    n = x.shape[-1]
    _check_pow2(n, "fwht")
    y = np.array(x, dtype=np.float64, copy=True)
    h = 1
    while h < n:
        y = y.reshape(x.shape[:-1] + (n // (2 * h), 2, h))
        a = y[..., 0, :].copy()
        b = y[..., 1, :]
        y[..., 0, :] = a + b
        y[..., 1, :] = a - b
        y = y.reshape(x.shape[:-1] + (n,))
        h *= 2
    return y


def sequency_permutation(n):
    """perm[s] = natural (Sylvester) row index with sequency s.

    Natural index is the bit-reversed Gray code of the sequency index.
    """
    _check_pow2(n, "sequency_permutation")
    bits = n.bit_length() - 1
    s = np.arange(n, dtype=np.int64)
    gray = s ^ (s >> 1)
    perm = np.zeros(n, dtype=np.int64)
    for i in range(bits):
        perm = (perm << 1) | ((gray >> i) & 1)
    return perm


def hadamard_rows(n, m=None):
    """First ``m`` sequency-ordered Hadamard rows as a dense {-1,+1} matrix."""
    perm = sequency_permutation(n)[: (m if m is not None else n)]
    eye = np.zeros((len(perm), n))
    eye[np.arange(len(perm)), perm] = 1.0
    return fwht_np(eye)  # H_syl is symmetric, so rows = H_syl[perm]


# ---- tape ops ---------------------------------------------------------------

def dct2(x):
    """Orthonormal DCT-II over the last two axes (self-adjoint pair with idct2)."""
    return T.apply_linear(dct2_np, idct2_np, x)


def idct2(x):
    return T.apply_linear(idct2_np, dct2_np, x)


def fft2(x):
    """Unitary FFT2 on a channel-pair tensor; adjoint is the inverse."""
    x = T._as_tensor(x)
    if x.data.ndim < 3 or x.data.shape[-3] != 2:
        raise ShapeError(f"fft2: expected (..., 2, H, W), got {x.data.shape}")
    _check_pow2(x.data.shape[-1], "fft2")
    _check_pow2(x.data.shape[-2], "fft2")
    return T.apply_linear(fft2_pair_np, ifft2_pair_np, x)


def ifft2(x):
    x = T._as_tensor(x)
    if x.data.ndim < 3 or x.data.shape[-3] != 2:
        raise ShapeError(f"ifft2: expected (..., 2, H, W), got {x.data.shape}")
    _check_pow2(x.data.shape[-1], "ifft2")
    _check_pow2(x.data.shape[-2], "ifft2")
    return T.apply_linear(ifft2_pair_np, fft2_pair_np, x)


def fwht(x):
    """Sylvester WHT along the last axis (self-adjoint, unnormalized)."""
    return T.apply_linear(fwht_np, fwht_np, x)
