"""Node-drop augmentation, projection head and the NT-Xent contrastive loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dsagc.autodiff import Tensor, as_tensor, l2_normalize, logsumexp
from dsagc.errors import ConfigError, NumericalError
from dsagc.nn import MLP

NEG_INF = -1e30


@dataclass(frozen=True)
class AugmentedView:
    kept_nodes: np.ndarray
    flat: np.ndarray


def default_drop_count(n_nodes: int, ratio: float = 0.2) -> int:
    """Nodes removed per view: 13 for 62 channels (49 survivors), else ceil(ratio * N)."""
    if n_nodes == 62:
        return 13
    return min(n_nodes - 1, int(np.ceil(ratio * n_nodes)))


def sample_kept_nodes(batch: int, n_nodes: int, drop_count: int, rng: np.random.Generator):
    """Indices of surviving nodes, shape (batch, n_nodes - drop_count), ascending per row."""
    if not 0 <= drop_count < n_nodes:
        raise ConfigError(f"drop_count must be in [0, {n_nodes}), got {drop_count}")
    if drop_count == 0:
        return np.tile(np.arange(n_nodes), (batch, 1))
    order = rng.random((batch, n_nodes)).argsort(axis=1)
    return np.sort(order[:, drop_count:], axis=1)


def drop_nodes(conv_out: Tensor, kept: np.ndarray) -> Tensor:
    """Gather surviving nodes of a batch (B, N, C) and flatten to (B, N_keep * C)."""
    conv_out = as_tensor(conv_out)
    B = conv_out.shape[0]
    picked = conv_out[np.arange(B)[:, None], kept]
    return picked.reshape(B, -1)


def node_drop(conv_out, drop_count: int, rng: np.random.Generator) -> AugmentedView:
    """Drop ``drop_count`` random nodes from one graph's (N, C) output."""
    x = np.asarray(conv_out.data if isinstance(conv_out, Tensor) else conv_out, dtype=float)
    kept = sample_kept_nodes(1, x.shape[0], drop_count, rng)
    return AugmentedView(kept_nodes=kept[0], flat=x[kept[0]].reshape(-1))


class ProjectionHead(MLP):
    def __init__(self, rng: np.random.Generator, widths=(64, 64, 32)):
        super().__init__(widths, rng)


def nt_xent(Z1, Z2, tau: float = 0.5) -> Tensor:
    """Symmetrised normalised temperature-scaled cross-entropy.

    For anchor row i of one view the positive is row i of the other view and
    the negatives are the other rows of the anchor's own view; the positive
    does not appear in the denominator.
    """
    Z1, Z2 = as_tensor(Z1), as_tensor(Z2)
    B = Z1.shape[0]
    if B < 2:
        raise ConfigError("nt_xent needs at least two rows per view")
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    for Z in (Z1, Z2):
        if (np.linalg.norm(Z.data, axis=1) < 1e-12).any():
            raise NumericalError("nt_xent received a zero-norm embedding row")
    n1, n2 = l2_normalize(Z1), l2_normalize(Z2)
    pos = (n1 * n2).sum(axis=1) * (1.0 / tau)
    diag_mask = np.where(np.eye(B, dtype=bool), NEG_INF, 0.0)
    total = 0.0
    for n in (n1, n2):
        sims = (n @ n.T) * (1.0 / tau) + diag_mask
        total = total + (logsumexp(sims, axis=1) - pos).mean()
    return total * 0.5
