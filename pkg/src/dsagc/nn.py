"""Parameter containers and dense layers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterable

import numpy as np

from dsagc.autodiff import Tensor, dropout, relu


class Module:
    """Minimal parameter owner; sub-modules and tensors are discovered by attribute order."""

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Linear(Module):
    """Affine map ``x @ W + b``; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.W = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


class MLP(Module):
    """Stack of affine layers with ReLU between them (none after the last).

    ``dropout_after`` lists hidden-layer indices followed by dropout.
    """

    def __init__(
        self,
        widths: Iterable[int],
        rng: np.random.Generator,
        dropout_after: Iterable[int] = (),
        p_drop: float = 0.5,
    ):
        widths = list(widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.dropout_after = tuple(dropout_after)
        self.p_drop = p_drop

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = relu(x)
                if i in self.dropout_after:
                    x = dropout(x, self.p_drop, rng)
        return x
