"""Reconstruction quality metrics."""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError, ShapeError


def psnr(x_hat, x, peak=1.0):
    """10 log10(peak^2 / MSE) in dB; returns inf when MSE is zero."""
    if peak <= 0:
        raise ParameterError(f"psnr peak must be > 0, got {peak}")
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
