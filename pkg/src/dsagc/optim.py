"""RMSprop without momentum."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from dsagc.errors import NumericalError


def rmsprop_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None],
                 state: Mapping[str, np.ndarray], lr: float, rho: float = 0.99,
                 eps: float = 1e-8):
    """One RMSprop update; returns ``(new_params, new_state)`` without mutating inputs.

    ``s <- rho s + (1 - rho) g^2``; ``p <- p - lr g / (sqrt(s) + eps)``.
    A missing gradient counts as zero.
    """
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        s = rho * state.get(name, np.zeros_like(p)) + (1.0 - rho) * g * g
        new_state[name] = s
        new_params[name] = p - lr * g / (np.sqrt(s) + eps)
    return new_params, new_state


class RMSprop:
    """Stateful wrapper updating :class:`Tensor` parameters in place."""

    def __init__(self, named_params, lr: float = 1e-3, rho: float = 0.99, eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.state = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        values = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items()}
        new, self.state = rmsprop_step(values, grads, self.state, self.lr, self.rho, self.eps)
        for k, t in self.params.items():
            t.data = new[k]
