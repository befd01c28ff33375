"""
Adam with bias-corrected moments, plus global-norm gradient clipping.
"""
from typing import Sequence

import numpy as np

from src.autodiff.module import Parameter
from src.errors import StateError


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # moments persist per parameter name
        self.m: dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v: dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def step(self):
        if all(p.grad is None for p in self.params):
            raise StateError("adam step called before any backward pass populated gradients")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"step": np.array([float(self.t)])}
        for name in self.m:
            state[f"m/{name}"] = self.m[name].copy()
            state[f"v/{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        self.t = int(np.asarray(state["step"]).reshape(-1)[0])
        for name in self.m:
            self.m[name] = np.array(state[f"m/{name}"], dtype=np.float64)
            self.v[name] = np.array(state[f"v/{name}"], dtype=np.float64)


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most max_norm; returns the norm before clipping."""
    total = global_grad_norm(params)
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
