"""Student/teacher sensing operators for SPC, MRI and SR.

Every operator is a linear map with a fast ``apply_np``/``adjoint_np`` pair
and tape-recorded counterparts, so fidelity gradients are differentiable
through the solver. Signals are flattened images of length n = side^2;
leading axes are treated as batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import transforms as tr
from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. zero-mean Gaussian measurement noise."""
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError(f"noise sigma must be >= 0, got {self.sigma}")


class SensingOperator:
    """Linear forward model H with analytic adjoint.

    kind: 'SPC', 'MRI' or 'SR'; n: signal length; m: measurement count
    (MRI outputs 2m reals for m complex samples); out_dim: real output length.
    """

    kind = "generic"

    def __init__(self, image_side, n, m, out_dim):
        self.image_side = image_side
        self.n = n
        self.m = m
        self.out_dim = out_dim

    # numpy paths -------------------------------------------------------
    def apply_np(self, x):
        raise NotImplementedError

    def adjoint_np(self, y):
        raise NotImplementedError

    def gram_trace(self):
        """trace(H^T H), used for the Hessian preconditioner's Tikhonov floor."""
        raise NotImplementedError

    def _check_in(self, x):
        if x.shape[-1] != self.n:
            raise ShapeError(f"{self.kind}: expected signal length {self.n}, got {x.shape[-1]}")

    def _check_out(self, y):
        if y.shape[-1] != self.out_dim:
            raise ShapeError(f"{self.kind}: expected measurement length {self.out_dim}, got {y.shape[-1]}")

    # tape paths --------------------------------------------------------
    def apply(self, x):
        x = T._as_tensor(x)
        self._check_in(x.data)
        return T.apply_linear(self.apply_np, self.adjoint_np, x)

    def adjoint(self, y):
        y = T._as_tensor(y)
        self._check_out(y.data)
        return T.apply_linear(self.adjoint_np, self.apply_np, y)

    # dense views -------------------------------------------------------
    def dense(self):
        """Materialize H (out_dim x n). Oracle/analysis use only."""
        return np.ascontiguousarray(self.apply_np(np.eye(self.n)).T)

    def gram_dense(self):
        """H^T H as a dense n x n matrix."""
        rows = self.apply_np(np.eye(self.n))  # row i = H e_i
        return rows @ rows.T

    def dump_dense(self, path):
        """Row-major float64 binary dump of H for external oracles."""
        self.dense().astype("<f8").tofile(path)


class SpcOperator(SensingOperator):
    """Single-pixel camera: first-m sequency-ordered Hadamard rows.

    By default rows keep their raw {-1,+1} entries (so H H^T = n I).
    ``normalized=True`` rescales H by 1/sqrt(n), making H^T H an orthogonal
    projection with unit spectrum; the small fixed step sizes of the
    reference experiments assume this scaling.
    """

    kind = "SPC"

    def __init__(self, image_side, gamma, normalized=False):
        if not (0 < gamma <= 1):
            raise ParameterError(f"SPC gamma must lie in (0, 1], got {gamma}")
        side = int(image_side)
        if side < 1 or (side & (side - 1)) != 0:
            raise ParameterError(f"SPC image_side must be a power of two, got {side}")
        n = side * side
        m = int(np.floor(gamma * n))
        if m < 1:
            raise ParameterError(f"SPC gamma {gamma} yields no measurements")
        super().__init__(side, n, m, m)
        self.gamma = gamma
        self.normalized = normalized
        self.scale = 1.0 / np.sqrt(n) if normalized else 1.0
        self.row_idx = tr.sequency_permutation(n)[:m]

    def apply_np(self, x):
        self._check_in(x)
        return self.scale * tr.fwht_np(x)[..., self.row_idx]

    def adjoint_np(self, y):
        self._check_out(y)
        z = np.zeros(y.shape[:-1] + (self.n,))
        z[..., self.row_idx] = y
        return self.scale * tr.fwht_np(z)  # Sylvester Hadamard is symmetric

    def gram_trace(self):
        return float(self.m) * self.n * self.scale ** 2


class MriOperator(SensingOperator):
    """Single-coil MRI: unitary 2D DFT masked along phase-encode columns."""

    kind = "MRI"

    def __init__(self, image_side, af_target, mask_seed=0):
        if af_target < 1:
            raise ParameterError(f"MRI acceleration factor must be >= 1, got {af_target}")
        side = int(image_side)
        if side < 1 or (side & (side - 1)) != 0:
            raise ParameterError(f"MRI image_side must be a power of two, got {side}")
        n = side * side
        n_cols = max(1, int(round(side / af_target)))
        cols = self._sample_columns(side, n_cols, mask_seed)
        m = side * len(cols)
        super().__init__(side, n, m, 2 * m)
        self.af_target = af_target
        self.mask_cols = cols
        self.mask = np.zeros((side, side))
        self.mask[:, cols] = 1.0
        grid = np.arange(n).reshape(side, side)
        self.kept_idx = grid[:, cols].reshape(-1)
        self.achieved_af = n / m

    @staticmethod
    def _sample_columns(side, n_cols, seed):
        """Gaussian-density column sampling without replacement, DC forced."""
        if n_cols >= side:
            return np.arange(side)
        rng = np.random.default_rng(seed)
        dist = np.minimum(np.arange(side), side - np.arange(side))  # distance to DC
        std = side / 6.0
        p = np.exp(-0.5 * (dist / std) ** 2)
        p[0] = 0.0  # DC forced in, excluded from sampling
        chosen = [0]
        if n_cols > 1:
            p = p / p.sum()
            rest = rng.choice(side, size=n_cols - 1, replace=False, p=p)
            chosen.extend(int(c) for c in rest)
        return np.sort(np.asarray(chosen, dtype=np.int64))

    def apply_np(self, x):
        self._check_in(x)
        side = self.image_side
        img = x.reshape(x.shape[:-1] + (side, side))
        Z = np.fft.fft2(img, norm="ortho")
        v = Z.reshape(x.shape[:-1] + (self.n,))[..., self.kept_idx]
        return np.concatenate([v.real, v.imag], axis=-1)

    def adjoint_np(self, y):
        self._check_out(y)
        m = self.m
        v = y[..., :m] + 1j * y[..., m:]
        Z = np.zeros(y.shape[:-1] + (self.n,), dtype=np.complex128)
        Z[..., self.kept_idx] = v
        side = self.image_side
        img = np.fft.ifft2(Z.reshape(y.shape[:-1] + (side, side)), norm="ortho")
        return img.real.reshape(y.shape[:-1] + (self.n,))

    def gram_trace(self):
        return float(self.m)  # each kept unitary-DFT row has unit norm


class SrOperator(SensingOperator):
    """Super-resolution: circular Gaussian blur followed by strided decimation."""

    kind = "SR"

    def __init__(self, image_side, rf, blur_size=9, blur_sigma=1.0):
        side = int(image_side)
        rf = int(rf)
        if rf < 1:
            raise ParameterError(f"SR resolution factor must be >= 1, got {rf}")
        if side % rf != 0:
            raise ParameterError(f"SR image_side {side} not divisible by rf {rf}")
        if blur_size % 2 == 0 or blur_size < 1:
            raise ParameterError(f"SR blur_size must be odd, got {blur_size}")
        if blur_size > side:
            raise ParameterError(f"SR blur_size {blur_size} exceeds image_side {side}")
        n = side * side
        low = side // rf
        m = low * low
        super().__init__(side, n, m, m)
        self.rf = rf
        self.kernel = gaussian_kernel(blur_size, blur_sigma)
        # embed kernel with its center at the origin for FFT-based circular conv
        emb = np.zeros((side, side))
        r = blur_size // 2
        emb[:blur_size, :blur_size] = self.kernel
        emb = np.roll(emb, (-r, -r), axis=(0, 1))
        self._Kf = np.fft.fft2(emb)

    def apply_np(self, x):
        self._check_in(x)
        side = self.image_side
        img = x.reshape(x.shape[:-1] + (side, side))
        blurred = np.fft.ifft2(np.fft.fft2(img) * self._Kf).real
        dec = blurred[..., ::self.rf, ::self.rf]
        return dec.reshape(x.shape[:-1] + (self.m,))

    def adjoint_np(self, y):
        self._check_out(y)
        side = self.image_side
        low = side // self.rf
        up = np.zeros(y.shape[:-1] + (side, side))
        up[..., ::self.rf, ::self.rf] = y.reshape(y.shape[:-1] + (low, low))
        out = np.fft.ifft2(np.fft.fft2(up) * np.conj(self._Kf)).real
        return out.reshape(y.shape[:-1] + (self.n,))

    def gram_trace(self):
        return float(self.m) * float(np.sum(self.kernel ** 2))


def gaussian_kernel(size, sigma):
    """Normalized (sum 1) isotropic Gaussian kernel; sigma=0 gives a delta."""
    if sigma <= 0:
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    ax = np.arange(size) - size // 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def build_spc(image_side, gamma, normalized=False):
    return SpcOperator(image_side, gamma, normalized)


def build_mri(image_side, af_target, mask_seed=0):
    return MriOperator(image_side, af_target, mask_seed)


def build_sr(image_side, rf, blur_size=9, blur_sigma=1.0):
    return SrOperator(image_side, rf, blur_size, blur_sigma)


def simulate(op, x, noise):
    """y = Hx + e with seeded Gaussian e; bit-reproducible per seed."""
    data = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)
    y = op.apply_np(data)
    if noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        y = y + noise.sigma * rng.standard_normal(y.shape)
    return T.Tensor(y)


def grad_fidelity(op, x, y):
    """H^T (Hx - y); differentiable with respect to x."""
    x = T._as_tensor(x)
    y = T._as_tensor(y)
    return op.adjoint(T.sub(op.apply(x), y))


def fidelity_value(op, x_np, y_np):
    """g(x) = ||Hx - y||_2^2 as a plain float (per batch row if batched)."""
    r = op.apply_np(x_np) - y_np
    return np.sum(r * r, axis=-1)
