"""Self-attentive fusion of the two streams and similarity-weighted classification.

Attention runs across the rows of a batch within each head: every sample
attends to every other sample in the same batch, so a sample's fused
representation depends on its batch companions. Evaluation therefore uses
fixed-composition batches.
"""
from __future__ import annotations

import numpy as np

from dsagc.autodiff import Tensor, as_tensor, l2_normalize, log, softmax
from dsagc.errors import ConfigError, ShapeError
from dsagc.nn import Linear, Module

LOG_FLOOR = 1e-12
CE_MODES = ("inside_log", "outside_log")


def attention(Q, K, V) -> Tensor:
    """``softmax(Q K^T / sqrt(d)) V`` with the softmax over the last axis."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    d = Q.shape[-1]
    return softmax((Q @ K.swapaxes(-1, -2)) * (1.0 / np.sqrt(d)), axis=-1) @ V


class MultiHeadAttention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ConfigError(f"width {width} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(width, width, rng)
        self.k = Linear(width, width, rng)
        self.v = Linear(width, width, rng)

    def __call__(self, X: Tensor) -> Tensor:
        return mha(X, self, self.heads)


def mha(X, params: MultiHeadAttention, H: int) -> Tensor:
    """Project to Q, K, V, split into ``H`` subspaces, attend per head, concatenate."""
    X = as_tensor(X)
    B, width = X.shape
    if width % H:
        raise ConfigError(f"width {width} is not divisible by {H} heads")
    d = width // H

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, H, d).swapaxes(0, 1)  # (H, B, d)

    heads = attention(split(params.q(X)), split(params.k(X)), split(params.v(X)))
    return heads.swapaxes(0, 1).reshape(B, width)


def sample_similarity(R_s, R_t) -> Tensor:
    """Softmax over source rows of their mean cosine similarity to the target rows."""
    R_s, R_t = as_tensor(R_s), as_tensor(R_t)
    sims = (l2_normalize(R_s) @ l2_normalize(R_t).T).mean(axis=1)
    return softmax(sims, axis=0)


def weighted_ce(probs, labels, weights, mode: str = "inside_log") -> Tensor:
    """Similarity-weighted cross-entropy over B labeled rows.

    ``inside_log``: ``-(1/B) sum_b log(w_b * p_b[y_b])``.
    ``outside_log``: ``-(1/B) sum_b w_b log p_b[y_b]``.
    """
    probs, weights = as_tensor(probs), as_tensor(weights)
    labels = np.asarray(labels, dtype=int)
    B = probs.shape[0]
    if weights.shape != (B,) or labels.shape != (B,):
        raise ShapeError(f"weights {weights.shape} / labels {labels.shape} do not match batch {B}")
    p_true = probs[np.arange(B), labels]
    if mode == "inside_log":
        return -log(weights * p_true, floor=LOG_FLOOR).mean()
    if mode == "outside_log":
        return -(weights * log(p_true, floor=LOG_FLOOR)).mean()
    raise ConfigError(f"unknown ce mode {mode!r}; expected one of {CE_MODES}")
