"""Knowledge-distillation training of a trainable preconditioner.

A teacher solver (identity preconditioner, well-conditioned operator)
produces reference reconstructions; the student's preconditioner is trained
so that the student solver imitates them. Three loss terms are combined:
gradient-direction alignment, output imitation, and plain supervision
against the ground-truth image. Teacher quantities never carry gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import (ConfigError, ContractError, DataError, DivergenceError,
                     ParameterError)
from .forward_models import grad_fidelity
from .optim import AdamOptimizer
from .solver import pnp_fista


@dataclass
class KdConfig:
    lambda_g: float = 1.0
    lambda_i: float = 1.0
    lambda_s: float = 1.0
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 16
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if self.lambda_g < 0 or self.lambda_i < 0 or self.lambda_s < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda_g == 0 and self.lambda_i == 0 and self.lambda_s == 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "adamw"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")

    @property
    def is_supervised_only(self):
        return self.lambda_g == 0 and self.lambda_i == 0


@dataclass
class DistillSession:
    X: np.ndarray          # (N, n) clean images
    Y_s: np.ndarray        # (N, out_dim_s) student measurements
    Y_t: np.ndarray        # (N, out_dim_t) teacher measurements
    op_s: object
    op_t: object
    student_cfg: object
    teacher_cfg: object
    kd: KdConfig
    precond: object
    prox: object
    teacher_prox: object = None
    teacher_cache_path: str = None
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.X) == len(self.Y_s) == len(self.Y_t)):
            raise DataError("X, Y_s, Y_t must have equal lengths")
        if len(self.X) == 0:
            raise DataError("empty training set")
        if self.teacher_prox is None:
            self.teacher_prox = self.prox


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def _detached(t):
    return T.Tensor(t.data if isinstance(t, T.Tensor) else np.asarray(t, dtype=np.float64))


def loss_gradient(pg, tg):
    """|1 - cos(pg, tg)|^2, averaged over the batch; tg is detached."""
    pg = T._as_tensor(pg)
    tg = _detached(tg)
    if pg.data.ndim == 1:
        s = T.cosine_similarity(pg, tg)
        d = 1.0 - s
        return T.mul(d, d)
    s = T.rowwise_cosine_similarity(pg, tg)
    d = 1.0 - s
    return T.tmean(T.mul(d, d))


def loss_imitation(x_p, x_t):
    """||x_p - x_t||^2 (batch mean of per-sample values); x_t is detached."""
    x_p = T._as_tensor(x_p)
    x_t = _detached(x_t)
    d = T.sub(x_p, x_t)
    if x_p.data.ndim == 1:
        return T.sumsq(d)
    return T.tmean(T.sum_last(T.mul(d, d)))


def loss_supervised(x_p, x_gt):
    """||x_p - x_gt||^2 against the ground-truth image."""
    return loss_imitation(x_p, x_gt)


def kd_total(lg, li, ls, cfg):
    """Weighted sum lambda_G L_G + lambda_I L_I + lambda_S L_S."""
    if cfg.lambda_g == 0 and cfg.lambda_i == 0 and cfg.lambda_s == 0:
        raise ConfigError("all loss weights are zero")
    terms = []
    if cfg.lambda_g != 0:
        terms.append(T.mul(lg, cfg.lambda_g))
    if cfg.lambda_i != 0:
        terms.append(T.mul(li, cfg.lambda_i))
    if cfg.lambda_s != 0:
        terms.append(T.mul(ls, cfg.lambda_s))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _teacher_reconstructions(session):
    """All teacher final iterates, computed once without the tape."""
    if session.teacher_cache_path is not None:
        import os
        if os.path.exists(session.teacher_cache_path):
            return np.load(session.teacher_cache_path)
    from .preconditioners import IdentityPreconditioner
    cfg = replace(session.teacher_cfg, record_trace=False)
    with T.no_grad():
        run = pnp_fista(IdentityPreconditioner(), session.op_t,
                        T.Tensor(session.Y_t), cfg, session.teacher_prox)
    xt = run.final_x.data
    if session.teacher_cache_path is not None:
        np.save(session.teacher_cache_path, xt)
    return xt


def train_npo(session):
    """Distill the teacher into the session's trainable preconditioner.

    Per batch: one student solver run on the tape, the three-term loss at
    the final iterates (gradient loss evaluated with the iteration encoding
    of the final iteration K), and one optimizer step on the batch mean.
    Returns the preconditioner; per-epoch means land in loss_history.
    """
    kd = session.kd
    p = session.precond
    if not p.trainable:
        raise ContractError("train_npo requires a trainable preconditioner")
    opt = AdamOptimizer(p.parameters(), lr=kd.learning_rate,
                        weight_decay=kd.weight_decay if kd.optimizer == "adamw" else 0.0)
    Xt_all = _teacher_reconstructions(session)
    N = len(session.X)
    K = session.student_cfg.K
    scfg = replace(session.student_cfg, record_trace=False)
    rng = np.random.default_rng(kd.seed)
    session.loss_history.clear()
    for epoch in range(1, kd.epochs + 1):
        order = rng.permutation(N) if kd.shuffle else np.arange(N)
        sums = np.zeros(3)
        for start in range(0, N, kd.batch_size):
            idx = order[start:start + kd.batch_size]
            xb = session.X[idx]
            ysb = T.Tensor(session.Y_s[idx])
            xtb = Xt_all[idx]

            try:
                run = pnp_fista(p, session.op_s, ysb, scfg, session.prox)
            except DivergenceError as exc:
                raise DivergenceError(
                    exc.iteration,
                    f"student solver diverged at iteration {exc.iteration} "
                    f"(epoch {epoch}, batch starting at sample {start})") from exc
            x_p = run.final_x

            zero = T.Tensor(np.asarray(0.0))
            lg = zero
            if kd.lambda_g != 0:
                gs = grad_fidelity(session.op_s, x_p, ysb)
                pg = p.apply(gs, K)
                with T.no_grad():
                    tg = grad_fidelity(session.op_t, T.Tensor(xtb), T.Tensor(session.Y_t[idx]))
                lg = loss_gradient(pg, tg)
            li = loss_imitation(x_p, xtb) if kd.lambda_i != 0 else zero
            ls = loss_supervised(x_p, xb) if kd.lambda_s != 0 else zero
            total = kd_total(lg, li, ls, kd)
            if not np.isfinite(total.data):
                raise ContractError(
                    f"non-finite loss in epoch {epoch}, batch starting at sample {start}")
            T.backward(total)
            opt.step()
            sums += len(idx) * np.array([float(lg.data), float(li.data), float(ls.data)])
        means = sums / N
        total_mean = kd.lambda_g * means[0] + kd.lambda_i * means[1] + kd.lambda_s * means[2]
        session.loss_history.append(
            {"epoch": epoch, "loss_g": means[0], "loss_i": means[1],
             "loss_s": means[2], "total": total_mean})
    return p
