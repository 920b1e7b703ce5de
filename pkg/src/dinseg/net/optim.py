"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        lr: float,
    ) -> dict[str, np.ndarray]:
        """One in-place update; returns the params dict for convenience."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p, dtype=np.float32)
                self.v[name] = np.zeros_like(p, dtype=np.float32)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / c1
            vhat = v / c2
            p -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
        return params

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"__opt__.t": np.array([self.t], dtype=np.float32)}
        for name, m in self.m.items():
            out[f"__opt__.m.{name}"] = m
            out[f"__opt__.v.{name}"] = self.v[name]
        return out

    @classmethod
    def from_state(cls, tensors: dict[str, np.ndarray], beta1=0.9, beta2=0.99, eps=1e-8) -> "Adam":
        opt = cls(beta1, beta2, eps)
        opt.t = int(tensors.get("__opt__.t", np.zeros(1))[0])
        for name, arr in tensors.items():
            if name.startswith("__opt__.m."):
                opt.m[name[len("__opt__.m."):]] = arr.copy()
            elif name.startswith("__opt__.v."):
                opt.v[name[len("__opt__.v."):]] = arr.copy()
        return opt
