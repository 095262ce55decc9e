"""Adam with bias correction over named parameter lists."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class MissingGradientError(RuntimeError):
    """A parameter reached the optimizer without a populated gradient."""


class Adam:
    """Standard Adam recurrence.

    m <- b1 m + (1-b1) g ; v <- b2 v + (1-b2) g^2
    w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self) -> None:
        missing = [name for name, p in self.params if p.grad is None]
        if missing:
            raise MissingGradientError("no gradient for parameter(s): " + ", ".join(missing))
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr * (self.m[i] / c1) /
                       (np.sqrt(self.v[i] / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None
