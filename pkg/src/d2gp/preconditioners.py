"""Gradient preconditioners: classical baselines, learned linear variants,
and the nonlinear ConvNeXt-style operator with iteration encoding.

All variants map a fidelity gradient of length n (batched as (B, n)) to a
transformed gradient of the same shape. Trainable variants initialize to the
identity map and are differentiable end-to-end through the tape.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import CapabilityError, ContractError, NumericalError, ParameterError

FULL_LINEAR_MAX_N = 4096

VARIANTS = (
    "identity", "hessian", "polynomial", "scalar",
    "conv", "pointwise", "full_linear", "npo",
)


class Preconditioner:
    variant = "identity"
    trainable = False

    def apply(self, grad, k):
        raise NotImplementedError

    def parameters(self):
        return []

    def parameter_count(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def _check_k(self, k, K):
        if not (1 <= k <= K):
            raise IndexError(f"{self.variant}: iteration index {k} outside [1, {K}]")


class IdentityPreconditioner(Preconditioner):
    variant = "identity"

    def apply(self, grad, k):
        return T._as_tensor(grad)


def cg_solve(mat_fn, b, tol=1e-10, maxiter=None):
    """Batched conjugate gradient for SPD mat_fn over rows of b (..., n)."""
    n = b.shape[-1]
    if maxiter is None:
        maxiter = 10 * n
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r, axis=-1, keepdims=True)
    bnorm = np.sqrt(np.max(np.sum(b * b, axis=-1)))
    if bnorm == 0:
        return x
    for _ in range(maxiter):
        if np.sqrt(np.max(rs)) <= tol * bnorm:
            return x
        Ap = mat_fn(p)
        pAp = np.sum(p * Ap, axis=-1, keepdims=True)
        alpha = np.where(pAp > 0, rs / np.where(pAp > 0, pAp, 1.0), 0.0)
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = np.sum(r * r, axis=-1, keepdims=True)
        beta = np.where(rs > 0, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta * p
        rs = rs_new
    if np.sqrt(np.max(rs)) <= tol * bnorm:
        return x
    raise NumericalError(f"CG did not converge within {maxiter} iterations")


class HessianPreconditioner(Preconditioner):
    """(H^T H + eps I)^{-1} grad, matrix-free via conjugate gradient.

    eps = eps_scale * trace(H^T H) / n keeps the solve well-posed when the
    Gram matrix is singular (m < n).
    """

    variant = "hessian"

    def __init__(self, op, eps_scale=1e-6, tol=1e-10):
        self.op = op
        self.eps = eps_scale * op.gram_trace() / op.n
        self.tol = tol

    def _solve(self, b):
        eps = self.eps

        def mat(v):
            return self.op.adjoint_np(self.op.apply_np(v)) + eps * v

        return cg_solve(mat, b, tol=self.tol, maxiter=10 * self.op.n)

    def apply(self, grad, k):
        grad = T._as_tensor(grad)
        # symmetric operator: adjoint of the solve is the solve itself
        return T.apply_linear(self._solve, self._solve, grad)


class PolynomialPreconditioner(Preconditioner):
    """p(H^T H) grad with monomial coefficients, evaluated Horner-style."""

    variant = "polynomial"
    trainable = True

    def __init__(self, op, degree=4):
        self.op = op
        self.coeffs = T.Parameter("poly_coeffs", np.zeros(degree + 1))
        self.coeffs.data[0] = 1.0  # identity at init

    def parameters(self):
        return [self.coeffs]

    def parameter_count(self):
        return self.coeffs.data.size

    def _coef(self, j):
        return T.reshape(T.take_cols(self.coeffs, [j]), ())

    def apply(self, grad, k):
        grad = T._as_tensor(grad)
        deg = self.coeffs.data.size - 1

        def gram(v):
            return self.op.adjoint(self.op.apply(v))

        acc = T.mul(grad, self._coef(deg))
        for j in range(deg - 1, -1, -1):
            acc = T.add(gram(acc), T.mul(grad, self._coef(j)))
        return acc


class ScalarStepPreconditioner(Preconditioner):
    """p_k * grad, one learned scalar per iteration."""

    variant = "scalar"
    trainable = True

    def __init__(self, K):
        self.K = K
        self.steps = T.Parameter("scalar_steps", np.ones(K))

    def parameters(self):
        return [self.steps]

    def apply(self, grad, k):
        self._check_k(k, self.K)
        grad = T._as_tensor(grad)
        pk = T.reshape(T.take_cols(self.steps, [k - 1]), ())
        return T.mul(grad, pk)


class ConvolutionalPreconditioner(Preconditioner):
    """p_k * grad (2D convolution), one learned kernel per iteration."""

    variant = "conv"
    trainable = True

    def __init__(self, K, image_side, ksize=5):
        if ksize % 2 == 0:
            raise ParameterError(f"conv preconditioner kernel size must be odd, got {ksize}")
        self.K = K
        self.image_side = image_side
        self.kernels = []
        for k in range(K):
            w = np.zeros((1, 1, ksize, ksize))
            w[0, 0, ksize // 2, ksize // 2] = 1.0  # delta: identity at init
            self.kernels.append(T.Parameter(f"conv_kernel_{k:03d}", w))

    def parameters(self):
        return list(self.kernels)

    def apply(self, grad, k):
        self._check_k(k, self.K)
        grad = T._as_tensor(grad)
        s = self.image_side
        batched = grad.data.ndim == 2
        B = grad.data.shape[0] if batched else 1
        img = T.reshape(grad, (B, 1, s, s))
        out = T.conv2d(img, self.kernels[k - 1])
        return T.reshape(out, grad.data.shape)


class PointwisePreconditioner(Preconditioner):
    """p_k (.) grad, one learned mask per iteration."""

    variant = "pointwise"
    trainable = True

    def __init__(self, K, n):
        self.K = K
        self.n = n
        self.masks = [T.Parameter(f"pointwise_mask_{k:03d}", np.ones(n)) for k in range(K)]

    def parameters(self):
        return list(self.masks)

    def apply(self, grad, k):
        self._check_k(k, self.K)
        return T.rowwise_mul(T._as_tensor(grad), self.masks[k - 1])


class FullLinearPreconditioner(Preconditioner):
    """P_k grad, one learned dense n x n matrix per iteration."""

    variant = "full_linear"
    trainable = True

    def __init__(self, K, n):
        if n > FULL_LINEAR_MAX_N:
            raise CapabilityError(
                f"full_linear preconditioner limited to n <= {FULL_LINEAR_MAX_N}, got {n}")
        self.K = K
        self.n = n
        self.matrices = [T.Parameter(f"full_linear_{k:03d}", np.eye(n)) for k in range(K)]

    def parameters(self):
        return list(self.matrices)

    def apply(self, grad, k):
        self._check_k(k, self.K)
        grad = T._as_tensor(grad)
        P = self.matrices[k - 1]
        if grad.data.ndim == 1:
            out = T.matmul(T.reshape(grad, (1, self.n)), T.transpose2d(P))
            return T.reshape(out, (self.n,))
        return T.matmul(grad, T.transpose2d(P))


class NpoNetwork:
    """ConvNeXt-style nonlinear preconditioning network.

    stem 3x3 -> iteration-encoding channel bias -> 5 blocks of
    (depthwise 7x7 -> channel layer norm -> pointwise expand 4C -> GELU ->
    pointwise project C -> residual) -> zero-init 3x3 head -> global residual.
    The head's zero init makes the initial network an exact identity map.
    """

    def __init__(self, image_side, in_channels=1, channels=32, blocks=5,
                 pe_dim=128, seed=0, init_std=0.02):
        self.image_side = image_side
        self.in_channels = in_channels
        self.channels = channels
        self.n_blocks = blocks
        self.pe_dim = pe_dim
        rng = np.random.default_rng(seed)
        C = channels

        def w(name, shape):
            return T.Parameter(name, init_std * rng.standard_normal(shape))

        self.stem_w = w("stem_w", (C, in_channels, 3, 3))
        self.stem_b = T.Parameter("stem_b", np.zeros(C))
        self.pe_w = w("pe_w", (pe_dim,))
        self.pe_proj = w("pe_proj", (C, pe_dim))
        self.blocks = []
        for i in range(blocks):
            blk = {
                "dw_w": w(f"blk{i}_dw_w", (C, 7, 7)),
                "dw_b": T.Parameter(f"blk{i}_dw_b", np.zeros(C)),
                "ln_g": T.Parameter(f"blk{i}_ln_g", np.ones(C)),
                "ln_b": T.Parameter(f"blk{i}_ln_b", np.zeros(C)),
                "pw1_w": w(f"blk{i}_pw1_w", (4 * C, C, 1, 1)),
                "pw1_b": T.Parameter(f"blk{i}_pw1_b", np.zeros(4 * C)),
                "pw2_w": w(f"blk{i}_pw2_w", (C, 4 * C, 1, 1)),
                "pw2_b": T.Parameter(f"blk{i}_pw2_b", np.zeros(C)),
            }
            self.blocks.append(blk)
        self.head_w = T.Parameter("head_w", np.zeros((in_channels, C, 3, 3)))
        self.head_b = T.Parameter("head_b", np.zeros(in_channels))

    def parameters(self):
        ps = [self.stem_w, self.stem_b, self.pe_w, self.pe_proj]
        for blk in self.blocks:
            ps.extend(blk.values())
        ps.extend([self.head_w, self.head_b])
        return ps

    def iteration_embedding(self, k):
        """phi(k) = pe_w * k; linear in k, zero at k = 0."""
        return T.mul(self.pe_w, float(k))

    def forward(self, x, k):
        """x: (B, in_channels, S, S); k: iteration index."""
        h = T.conv2d(x, self.stem_w, self.stem_b)
        pe_bias = T.matvec(self.pe_proj, self.iteration_embedding(k))
        h = T.add_channel_bias(h, pe_bias)
        for blk in self.blocks:
            r = T.depthwise_conv2d(h, blk["dw_w"], blk["dw_b"])
            r = T.channel_layer_norm(r, blk["ln_g"], blk["ln_b"])
            r = T.conv2d(r, blk["pw1_w"], blk["pw1_b"])
            r = T.gelu(r)
            r = T.conv2d(r, blk["pw2_w"], blk["pw2_b"])
            h = T.add(h, r)
        out = T.conv2d(h, self.head_w, self.head_b)
        return T.add(x, out)


class NpoPreconditioner(Preconditioner):
    """Trainable nonlinear preconditioning operator with iteration encoding.

    The gradient is normalized to unit RMS per sample before the network and
    rescaled afterwards (the scale carries no gradient). Fidelity gradients
    shrink by orders of magnitude as the solver converges; without this the
    features entering the network are dwarfed by the iteration-encoding bias
    and the operator degenerates to a data-independent per-iteration offset.
    Identity at init is preserved exactly: s * (g/s + 0) = g.
    """

    variant = "npo"
    trainable = True

    def __init__(self, image_side, in_channels=1, channels=32, blocks=5,
                 pe_dim=128, seed=0):
        self.image_side = image_side
        self.net = NpoNetwork(image_side, in_channels, channels, blocks, pe_dim, seed)

    def parameters(self):
        return self.net.parameters()

    def apply(self, grad, k):
        grad = T._as_tensor(grad)
        s = self.image_side
        c = self.net.in_channels
        batched = grad.data.ndim == 2
        B = grad.data.shape[0] if batched else 1
        img = T.reshape(grad, (B, c, s, s))
        rms = np.sqrt(np.mean(img.data.reshape(B, -1) ** 2, axis=1)) + 1e-12
        # nearest power of two: scaling in and out is then lossless, so the
        # zero-initialized network remains a bit-exact identity map
        rms = np.exp2(np.rint(np.log2(rms)))
        scale = np.broadcast_to(rms.reshape(B, 1, 1, 1), img.data.shape).copy()
        u = T.mul(img, T.Tensor(1.0 / scale))
        out = T.mul(self.net.forward(u, k), T.Tensor(scale))
        return T.reshape(out, grad.data.shape)


def make_preconditioner(variant, op=None, K=20, image_side=None, seed=0,
                        channels=32, blocks=5, pe_dim=128):
    """Factory covering every supported formulation.

    ``op`` is required for hessian/polynomial; ``image_side`` for conv/npo
    (taken from ``op`` when available).
    """
    if image_side is None and op is not None:
        image_side = op.image_side
    n = op.n if op is not None else (image_side * image_side if image_side else None)
    if variant == "identity":
        return IdentityPreconditioner()
    if variant == "hessian":
        if op is None:
            raise ContractError("hessian preconditioner requires a sensing operator")
        return HessianPreconditioner(op)
    if variant == "polynomial":
        if op is None:
            raise ContractError("polynomial preconditioner requires a sensing operator")
        return PolynomialPreconditioner(op)
    if variant == "scalar":
        return ScalarStepPreconditioner(K)
    if variant == "conv":
        if image_side is None:
            raise ContractError("conv preconditioner requires image_side")
        return ConvolutionalPreconditioner(K, image_side)
    if variant == "pointwise":
        if n is None:
            raise ContractError("pointwise preconditioner requires the signal length")
        return PointwisePreconditioner(K, n)
    if variant == "full_linear":
        if n is None:
            raise ContractError("full_linear preconditioner requires the signal length")
        return FullLinearPreconditioner(K, n)
    if variant == "npo":
        if image_side is None:
            raise ContractError("npo preconditioner requires image_side")
        return NpoPreconditioner(image_side, channels=channels, blocks=blocks,
                                 pe_dim=pe_dim, seed=seed)
    raise ParameterError(f"unknown preconditioner variant {variant!r}")
