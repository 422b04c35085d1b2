"""Adam with bias correction.

theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), where m_hat and v_hat
are the bias-corrected first and second moment estimates. Moments live in
the optimizer, one pair per parameter, and the shared step counter drives
the corrections.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .layers import Parameter


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                bad = int(np.count_nonzero(~np.isfinite(p.grad)))
                raise NumericError(
                    f"non-finite gradient on parameter {p.name or i} "
                    f"(shape {p.shape}, {bad} bad entries) at step {self.t + 1}"
                )
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            m_hat = m / correction1
            v_hat = v / correction2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
