"""Domain-adversarial alignment of the non-structural features across S, U and T."""
from __future__ import annotations

import numpy as np

from dsagc.autodiff import Tensor, as_tensor, grad_reverse, log, softmax
from dsagc.errors import ConfigError, ProtocolError
from dsagc.nn import MLP

DOMAIN_S, DOMAIN_U, DOMAIN_T = 0, 1, 2
DOMAIN_NAMES = ("S", "U", "T")
LOG_FLOOR = 1e-12

__all__ = [
    "Discriminator",
    "domain_loss",
    "domain_cross_entropy",
    "domain_probs",
    "grad_reverse",
    "one_hot_domains",
]


def one_hot_domains(domains) -> np.ndarray:
    domains = np.asarray(domains, dtype=int)
    out = np.zeros((len(domains), 3))
    out[np.arange(len(domains)), domains] = 1.0
    return out


class Discriminator(MLP):
    """64 -> 64 -> ReLU -> dropout -> 64 -> ReLU -> 3 logits.

    Three outputs are always allocated; the U output is masked out while
    only S and T take part (stage 2).
    """

    def __init__(self, rng: np.random.Generator, in_dim: int = 64, hidden: int = 64,
                 p_drop: float = 0.5):
        super().__init__((in_dim, hidden, hidden, 3), rng, dropout_after=(0,), p_drop=p_drop)


def domain_probs(logits: Tensor, stage: int) -> Tensor:
    """Softmax over domains; in stage 2 the U probability is exactly zero."""
    if stage not in (2, 3):
        raise ConfigError(f"stage must be 2 or 3, got {stage}")
    logits = as_tensor(logits)
    if stage == 3:
        return softmax(logits, axis=1)
    # masked softmax: renormalise over {S, T} and place a hard zero at U
    st = softmax(logits[:, [DOMAIN_S, DOMAIN_T]], axis=1)
    scatter = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return st @ scatter


def domain_cross_entropy(probs, domains) -> Tensor:
    """Mean of ``-sum_d l_d log p_d`` over rows, log clamped at 1e-12."""
    probs = as_tensor(probs)
    domains = np.asarray(domains, dtype=int)
    picked = probs[np.arange(len(domains)), domains]
    return -log(picked, floor=LOG_FLOOR).mean()


def domain_loss(features, domains, disc: Discriminator, stage: int, mu: float = 1.0,
                rng: np.random.Generator | None = None, reverse: bool = True) -> Tensor:
    """Discriminator cross-entropy on (optionally gradient-reversed) extractor features.

    ``domains`` holds integer labels (0=S, 1=U, 2=T) or one-hot rows.
    """
    domains = np.asarray(domains)
    if domains.ndim == 2:
        domains = domains.argmax(axis=1)
    if stage == 2 and (domains == DOMAIN_U).any():
        raise ProtocolError("unlabeled-source rows are not allowed before the stage switch")
    feats = grad_reverse(as_tensor(features), mu) if reverse else as_tensor(features)
    return domain_cross_entropy(domain_probs(disc(feats, rng), stage), domains)
