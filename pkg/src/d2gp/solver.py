"""Preconditioned PnP-FISTA with pluggable proximal operators.

The iteration, run for k = 1..K from x^0 = z^1 = 0, t^0 = 1:

    x^k <- z^k - alpha * P(grad_g(z^k), k)
    x^k <- prox_{alpha*rho*h}(x^k)
    t^k <- (1 + sqrt(1 + 4 (t^{k-1})^2)) / 2
    z^{k+1} <- x^k + ((t^{k-1} - 1) / t^k) (x^k - x^{k-1})

The momentum coefficient uses (t^{k-1} - 1)/t^k deliberately; see README.
When the preconditioner or prox is trainable the whole loop is recorded on
the autodiff tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import transforms as tr
from .errors import ContractError, DataError, DivergenceError, ParameterError
from .forward_models import fidelity_value, grad_fidelity
from .metrics import psnr
from .optim import AdamOptimizer


@dataclass
class SolverConfig:
    alpha: float = 0.4
    rho: float = 0.05
    K: int = 20
    record_trace: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.rho < 0:
            raise ParameterError(f"rho must be >= 0, got {self.rho}")
        if self.K < 1:
            raise ParameterError(f"K must be >= 1, got {self.K}")


@dataclass
class SolverRun:
    """Final iterate plus per-iteration trace of one solver execution."""
    final_x: T.Tensor
    fidelity: list = field(default_factory=list)   # per iteration, per sample
    psnr: list = field(default_factory=list)       # per iteration, per sample (or None)
    t_seq: list = field(default_factory=list)
    iterates: list = field(default_factory=list)   # detached x^k when traced

    @property
    def K(self):
        return len(self.t_seq)


def momentum_sequence(K):
    """t^0..t^K from t^0 = 1 via the Nesterov recurrence."""
    t = [1.0]
    for _ in range(K):
        t.append((1.0 + math.sqrt(1.0 + 4.0 * t[-1] ** 2)) / 2.0)
    return t


# ---------------------------------------------------------------------------
# proximal operators
# ---------------------------------------------------------------------------

class ProxOperator:
    variant = "identity_prox"
    trainable = False

    def apply(self, v, tau):
        raise NotImplementedError


class IdentityProx(ProxOperator):
    variant = "identity_prox"

    def apply(self, v, tau):
        return T._as_tensor(v)


class DctSoftThreshold(ProxOperator):
    """Exact proximal map of tau * ||dct2(.)||_1 (orthonormal transform)."""

    variant = "dct_soft_threshold"

    def __init__(self, image_side):
        self.image_side = image_side

    def apply(self, v, tau):
        if tau < 0:
            raise ContractError(f"prox threshold must be >= 0, got {tau}")
        v = T._as_tensor(v)
        s = self.image_side
        shape = v.data.shape
        img = T.reshape(v, shape[:-1] + (s, s))
        out = tr.idct2(T.soft_threshold(tr.dct2(img), tau))
        return T.reshape(out, shape)


class DenoiserNet:
    """Residual noise predictor: 5 conv layers, 3x3, 32 channels, ReLU."""

    def __init__(self, channels=32, layers=5, seed=0, init_std=0.05):
        rng = np.random.default_rng(seed)
        self.layers = []
        c_in = 1
        for i in range(layers):
            c_out = 1 if i == layers - 1 else channels
            w = T.Parameter(f"dn{i}_w", init_std * rng.standard_normal((c_out, c_in, 3, 3)))
            b = T.Parameter(f"dn{i}_b", np.zeros(c_out))
            self.layers.append((w, b))
            c_in = c_out

    def parameters(self):
        return [p for pair in self.layers for p in pair]

    def forward(self, x):
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = T.conv2d(h, w, b)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h


class CnnDenoiser(ProxOperator):
    """Plug-and-play prox: v - net(v); tau is ignored by convention."""

    variant = "cnn_denoiser"
    trainable = True

    def __init__(self, image_side, net=None, seed=0):
        self.image_side = image_side
        self.net = net if net is not None else DenoiserNet(seed=seed)

    def parameters(self):
        return self.net.parameters()

    def apply(self, v, tau):
        v = T._as_tensor(v)
        s = self.image_side
        shape = v.data.shape
        batched = v.data.ndim == 2
        B = shape[0] if batched else 1
        img = T.reshape(v, (B, 1, s, s))
        out = T.sub(img, self.net.forward(img))
        return T.reshape(out, shape)


def train_denoiser(images, image_side, sigma, epochs=20, seed=0, lr=1e-3, batch_size=8):
    """Train a residual CNN denoiser on (clean, clean + noise) pairs."""
    X = np.asarray([im.data if isinstance(im, T.Tensor) else im for im in images])
    if X.size == 0:
        raise DataError("train_denoiser: empty dataset")
    X = X.reshape(len(X), -1)
    prox = CnnDenoiser(image_side, seed=seed)
    opt = AdamOptimizer(prox.parameters(), lr=lr)
    rng = np.random.default_rng(seed + 1)
    for _ in range(epochs):
        # fresh noise each epoch so the net learns the noise statistics,
        # not one fixed realization
        noise = sigma * rng.standard_normal(X.shape)
        noisy = X + noise
        for start in range(0, len(X), batch_size):
            nb = noisy[start:start + batch_size]
            tb = noise[start:start + batch_size]
            inp = T.reshape(T.Tensor(nb), (len(nb), 1, image_side, image_side))
            target = T.Tensor(tb.reshape(len(tb), 1, image_side, image_side))
            pred = prox.net.forward(inp)
            loss = T.tmean(T.mul(T.sub(pred, target), T.sub(pred, target)))
            T.backward(loss)
            opt.step()
    return prox


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def pnp_fista(p, op, y, cfg, prox, x_true=None):
    """Run Preconditioned PnP-FISTA; returns the final iterate and trace.

    y: measurements (B, out_dim) or (out_dim,); x_true: optional ground
    truth of matching signal shape for per-iteration PSNR.
    """
    y = T._as_tensor(y)
    op._check_out(y.data)
    sig_shape = y.data.shape[:-1] + (op.n,)
    x_prev = T.Tensor(np.zeros(sig_shape))
    z = x_prev
    t_prev = 1.0
    tau = cfg.alpha * cfg.rho
    run = SolverRun(final_x=x_prev)
    x = x_prev
    for k in range(1, cfg.K + 1):
        g = grad_fidelity(op, z, y)
        pg = p.apply(g, k)
        x = T.sub(z, T.mul(pg, cfg.alpha))
        x = prox.apply(x, tau)
        if not np.all(np.isfinite(x.data)):
            raise DivergenceError(k)
        t = (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev)) / 2.0
        coef = (t_prev - 1.0) / t
        z = T.add(x, T.mul(T.sub(x, x_prev), coef))
        run.t_seq.append(t)
        if cfg.record_trace:
            run.fidelity.append(fidelity_value(op, x.data, y.data))
            run.iterates.append(x.data.copy())
            if x_true is not None:
                xt = x_true.data if isinstance(x_true, T.Tensor) else np.asarray(x_true)
                run.psnr.append(psnr_rows(x.data, xt))
        x_prev = x
        t_prev = t
    run.final_x = x
    return run


def psnr_rows(x_hat, x, peak=1.0):
    """Per-sample PSNR over the last axis (scalar for 1-D inputs)."""
    if x_hat.ndim == 1:
        return psnr(x_hat, x, peak)
    return np.array([psnr(a, b, peak) for a, b in zip(x_hat, x)])
