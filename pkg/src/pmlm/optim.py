"""Adam optimizer over a named map of tensors.

Decoupled weight decay (applied directly to the parameter, not through the
moment estimates); bias-corrected first/second moments; step counter
increments by exactly one per update.
"""

from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"adam: betas must lie in [0, 1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor]) -> None:
        """One Adam update over every parameter with a gradient.

        Parameters with ``grad is None`` are treated as zero-gradient.
        A non-finite gradient rejects the whole update before any parameter
        is touched.
        """
        for name, p in params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise ValueError(f"adam: non-finite gradient for parameter '{name}'")

        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_shapes_match(self, params: Mapping[str, Tensor]) -> bool:
        return all(
            name in self.m and self.m[name].shape == p.shape and self.v[name].shape == p.shape
            for name, p in params.items()
        )
