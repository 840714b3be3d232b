"""Adam and AdamW parameter updates for named tensor collections.

AdamW applies decoupled weight decay: parameters shrink by ``lr * wd``
before the bias-corrected Adam term is subtracted, so decay never passes
through the moment estimates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NonFiniteError, ShapeMismatchError


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _decay(self, p: Tensor) -> None:
        pass  # plain Adam: no decoupled decay

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.values.shape:
                raise ShapeMismatchError(
                    f"gradient shape {g.shape} != parameter shape {p.values.shape} for {name}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {name}")
            self._decay(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class AdamW(Adam):
    """Adam plus decoupled weight decay applied directly to parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        super().__init__(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                         weight_decay=weight_decay)

    def _decay(self, p: Tensor) -> None:
        if self.weight_decay:
            p.values *= 1.0 - self.lr * self.weight_decay
