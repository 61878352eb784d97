"""Adam optimizer over a fixed parameter list.

Standard recurrence with bias correction:

    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)

A parameter whose gradient buffer is unset is treated as having zero
gradient for the step.
"""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor

__all__ = ["Adam"]


class Adam:
    def __init__(self, params, lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ValueError("no parameters to optimize")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if lr <= 0 or eps <= 0:
            raise ValueError("lr and eps must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """One bias-corrected update from the current .grad buffers."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.isfinite(p.data).all():
                raise NonFiniteError("parameter became non-finite during Adam step")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
