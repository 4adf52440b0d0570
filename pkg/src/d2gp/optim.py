"""Adam / AdamW parameter updates with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class AdamOptimizer:
    """Adam with optional decoupled weight decay (AdamW when wd > 0).

    Decay is applied as param *= (1 - lr * wd) before the Adam step, so
    AdamW with wd = 0 is bit-identical to Adam.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"optimizer step with missing grad for {getattr(p, 'name', 'param')}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if self.weight_decay:
                p.data *= (1.0 - self.lr * self.weight_decay)
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** t)
            vhat = self.v[i] / (1 - b2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.grad = None
