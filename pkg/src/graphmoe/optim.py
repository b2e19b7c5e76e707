"""Adam optimizer and a central-finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import NumericalError
from .tape import Tensor


class Adam:
    """Adam with bias correction and optional decoupled weight decay.

    Moments are keyed by parameter name so the trainable set may shrink
    (pruned or frozen experts simply stop being passed to :meth:`step`).
    Each parameter keeps its own step count, which keeps bias correction
    exact for parameters that join or leave the update set mid-run.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[str, dict] = {}

    def step(self, params: Mapping[str, Tensor]) -> None:
        """Update every parameter that carries a gradient; skip the rest."""
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(p.values), "v": np.zeros_like(p.values), "t": 0}
                self.state[name] = st
            st["t"] += 1
            t = st["t"]
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * (g * g)
            m_hat = st["m"] / (1.0 - self.beta1 ** t)
            v_hat = st["v"] / (1.0 - self.beta2 ** t)
            if self.weight_decay:
                p.values -= self.lr * self.weight_decay * p.values
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self, params: Mapping[str, Tensor]) -> None:
        for p in params.values():
            p.zero_grad()


def finite_difference_grads(build_loss: Callable[[], Tensor],
                            params: Mapping[str, Tensor],
                            h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of ``build_loss`` w.r.t. every parameter entry.

    ``build_loss`` must rebuild the forward pass from the current parameter
    values on each call; parameters are perturbed in place and restored.
    """
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        grad = np.zeros_like(p.values)
        flat = p.values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = build_loss().item()
            flat[i] = orig - h
            f_minus = build_loss().item()
            flat[i] = orig
            grad.ravel()[i] = (f_plus - f_minus) / (2.0 * h)
        out[name] = grad
    return out


def grad_check(build_loss: Callable[[], Tensor],
               params: Mapping[str, Tensor],
               h: float = 1e-5) -> float:
    """Max relative error between analytic and finite-difference gradients.

    The relative error for each coordinate uses max(1, |analytic|) as the
    denominator. Straight-through paths must be disabled by the caller
    (they are non-differentiable by design and checked separately).
    """
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
                for name, p in params.items()}
    numeric = finite_difference_grads(build_loss, params, h=h)
    worst = 0.0
    for name in params:
        a = analytic[name]
        n = numeric[name]
        rel = np.abs(a - n) / np.maximum(1.0, np.abs(a))
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst
