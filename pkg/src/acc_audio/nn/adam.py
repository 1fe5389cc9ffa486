from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias-corrected moments, updating parameter arrays in place.

    ``t`` counts completed steps. Moments are kept in the parameter dtype;
    the bias-correction factors are computed in float64.
    """

    def __init__(self, params: list[np.ndarray], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not (len(params) == len(grads) == len(self.m)):
            raise ValueError(f"got {len(params)} params and {len(grads)} grads for {len(self.m)} moment slots")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.m[i].shape:
                raise ValueError(f"slot {i}: param {p.shape}, grad {g.shape}, moments {self.m[i].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in slot {i}")

        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        step = self.lr / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= step * m / (np.sqrt(v / c2) + self.eps)
