"""Exact t-SNE and the domain/class scatter plot."""
from __future__ import annotations

import logging
import warnings

import numpy as np

from dsagc import kernels

logger = logging.getLogger(__name__)

DOMAIN_MARKERS = {0: ("o", "S (labeled source)"), 1: ("*", "U (unlabeled source)"),
                  2: ("^", "T (target)")}


def _row_affinities(d2: np.ndarray, perplexity: float, tol: float = 1e-5,
                    max_iter: int = 100) -> np.ndarray:
    """Conditional affinities p_{j|i} with per-row precision found by bisection on entropy."""
    n = d2.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(d2[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            p = np.exp(-d * beta)
            s = p.sum()
            H = np.log(s) + beta * (d * p).sum() / s
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p / s
    return P


def joint_probabilities(X: np.ndarray, perplexity: float = 30.0) -> np.ndarray:
    sq = (X**2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    P = _row_affinities(d2, perplexity)
    P = (P + P.T) / (2.0 * len(X))
    return np.maximum(P, 1e-12)


def pca_2d(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    out = np.zeros((len(X), 2))
    k = min(2, Vt.shape[0])
    out[:, :k] = Xc @ Vt[:k].T
    return out


def tsne(X, perplexity: float = 30.0, n_iter: int = 1000, seed: int = 0,
         learning_rate: float | None = None, exaggeration: float = 12.0,
         exaggeration_iters: int = 250) -> np.ndarray:
    """Exact 2-D t-SNE with early exaggeration, momentum and adaptive gains.

    Inputs with three points or fewer are projected on their first two
    principal directions instead (with a warning). The perplexity is capped
    at ``(n - 1) / 3`` for small inputs. The default learning rate is
    ``max(n / exaggeration / 4, 50)``; a fixed 200 diverges on small sets.
    Identical input rows are tied: they share a seeded starting position
    and after every step their positions and momenta are replaced by the
    group mean. Coincident duplicates are a stationary configuration, but
    an unstable one whenever their embedded affinity exceeds their input
    affinity, and rounding alone would otherwise pull them apart.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n <= 3:
        warnings.warn(f"t-SNE skipped for {n} points; using principal directions", stacklevel=2)
        return pca_2d(X)
    perp = min(perplexity, (n - 1) / 3.0)
    if perp < perplexity:
        logger.info("perplexity reduced from %s to %.3f for %d points", perplexity, perp, n)
    P = joint_probabilities(X, perp)
    if learning_rate is None:
        learning_rate = max(n / exaggeration / 4.0, 50.0)
    rng = np.random.default_rng(seed)
    _, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    tied = bool((counts > 1).any())

    def tie(A):
        sums = np.zeros((len(counts), 2))
        np.add.at(sums, inverse, A)
        return (sums / counts[:, None])[inverse]

    Y = 1e-4 * rng.standard_normal((len(counts), 2))[inverse]
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(n_iter):
        exag = exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        grad, _ = kernels.tsne_gradient(np.ascontiguousarray(P * exag), np.ascontiguousarray(Y))
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(min=0.01)
        update = momentum * update - learning_rate * gains * grad
        if tied:
            update = tie(update)
        Y = Y + update
        if tied:
            Y = tie(Y)
        Y = Y - Y.mean(axis=0)
    return Y


def kl_divergence(X, Y, perplexity: float = 30.0) -> float:
    X = np.asarray(X, dtype=float)
    P = joint_probabilities(X, min(perplexity, (len(X) - 1) / 3.0))
    return kernels.tsne_gradient(P, np.ascontiguousarray(Y, dtype=float))[1]


def plot_embedding(Y: np.ndarray, domain: np.ndarray, label: np.ndarray, path, title: str = "",
                   metadata: dict[str, str] | None = None) -> None:
    """Scatter with marker = domain and color = class; PNG with text-chunk metadata."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dsagc"
    fig, ax = plt.subplots(figsize=(6, 5), dpi=100)
    cmap = plt.get_cmap("tab10")
    classes = sorted(int(c) for c in np.unique(label))
    for dom, (marker, name) in DOMAIN_MARKERS.items():
        for c in classes:
            sel = (domain == dom) & (label == c)
            if not sel.any():
                continue
            color = "0.5" if c < 0 else cmap(c % 10)
            tag = "unlabeled" if c < 0 else f"class {c}"
            ax.scatter(Y[sel, 0], Y[sel, 1], marker=marker, s=28 if marker == "*" else 16,
                       color=color, label=f"{name}, {tag}", linewidths=0.3)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(fontsize=6, loc="best", framealpha=0.8)
    fig.tight_layout()
    meta = {"Software": "dsagc"}
    meta.update(metadata or {})
    fig.savefig(path, format="png", metadata=meta)
    plt.close(fig)
