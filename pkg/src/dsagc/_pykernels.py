"""Pure numpy implementations of the hot kernels.

Reference backend and fallback when the compiled extension is not built.
Signatures and results match ``dsagc._ckernels`` exactly up to float rounding.
"""
import numpy as np

BACKEND = "python"


def start_vector(n):
    # Deterministic, never orthogonal to a generic eigenvector; shared by both backends.
    k = np.arange(n, dtype=np.uint64)
    h = (k * np.uint64(2654435761) + np.uint64(12345)) % np.uint64(2**32)
    v = h.astype(np.float64) / 2.0**32 - 0.5
    return v / np.linalg.norm(v)


def adjacency_forward(psi, w):
    """Row-softmax of -ReLU(w . |psi_j - psi_k|) per sample.

    psi: (B, N, C), w: (C,). Returns (A, scores) with scores the pre-ReLU values.
    """
    diff = np.abs(psi[:, :, None, :] - psi[:, None, :, :])
    scores = diff @ w
    logits = -np.maximum(scores, 0.0)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True), scores


def adjacency_backward(psi, w, A, scores, gA, need_psi=True):
    g_logit = A * (gA - (gA * A).sum(axis=-1, keepdims=True))
    g_score = np.where(scores > 0, -g_logit, 0.0)
    diff = psi[:, :, None, :] - psi[:, None, :, :]
    gw = np.einsum("bjk,bjkc->c", g_score, np.abs(diff))
    if not need_psi:
        return np.zeros_like(psi), gw
    t = g_score[..., None] * w * np.sign(diff)
    gpsi = t.sum(axis=2) - t.sum(axis=1)
    return gpsi, gw


def power_iteration(L, M, tol=1e-9, max_iter=500, vtol=1e-10):
    """Largest eigenvalue of each symmetric PSD matrix in ``L`` (B, N, N).

    ``M`` is the iteration operator: ``L`` itself or a normalised power of it
    sharing its top eigenvector. A graph has converged once the Rayleigh
    quotient of ``L`` moves by at most ``tol`` (relative) and the last step
    moved the unit vector by at most ``vtol``; the vector test matters
    because the quotient settles quadratically faster than the vector.
    Returns (lam, vecs, iters); iters[b] == max_iter + 1 flags non-convergence.
    """
    B, N, _ = L.shape
    v = np.tile(start_vector(N), (B, 1))
    lam = np.zeros(B)
    lam_old = np.full(B, np.inf)
    dv = np.full(B, np.inf)
    iters = np.full(B, max_iter + 1, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = np.einsum("bi,bij,bj->b", v[idx], L[idx], v[idx])
        lam[idx] = cur
        done = (np.abs(cur - lam_old[idx]) <= tol * np.maximum(1.0, np.abs(cur))) & (
            dv[idx] <= vtol)
        iters[idx[done]] = it
        active[idx[done]] = False
        go = idx[~done]
        lam_old[go] = cur[~done]
        y = np.einsum("bij,bj->bi", M[go], v[go])
        norms = np.linalg.norm(y, axis=1)
        zero = norms == 0.0
        if zero.any():
            # v lies in the null space; lam = 0 is exact
            iters[go[zero]] = it
            active[go[zero]] = False
            norms[zero] = 1.0
        y /= norms[:, None]
        dv[go] = np.linalg.norm(y - v[go], axis=1)
        v[go] = y
    return lam, v, iters


def cheb_forward(x, Lt, theta):
    """Chebyshev filter sum_p theta_p T_p(Lt) x. Returns (out, terms) with terms (P, B, N, C)."""
    P = theta.shape[0]
    terms = np.empty((P,) + x.shape)
    terms[0] = x
    if P > 1:
        terms[1] = Lt @ x
    for p in range(2, P):
        terms[p] = 2.0 * (Lt @ terms[p - 1]) - terms[p - 2]
    out = np.tensordot(theta, terms, axes=1)
    return out, terms


def cheb_backward(Lt, theta, terms, g):
    P = theta.shape[0]
    gtheta = np.einsum("pbnc,bnc->p", terms, g)
    G = theta[:, None, None, None] * g[None]
    LtT = np.swapaxes(Lt, -1, -2)
    gLt = np.zeros_like(Lt)
    for p in range(P - 1, 1, -1):
        G[p - 1] += 2.0 * (LtT @ G[p])
        G[p - 2] -= G[p]
        gLt += 2.0 * (G[p] @ np.swapaxes(terms[p - 1], -1, -2))
    if P > 1:
        G[0] += LtT @ G[1]
        gLt += G[1] @ np.swapaxes(terms[0], -1, -2)
    return G[0], gLt, gtheta


def tsne_gradient(P, Y):
    """Exact t-SNE KL gradient. Returns (grad, kl)."""
    sq = (Y**2).sum(axis=1)
    num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T)
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    W = (P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    mask = P > 0
    kl = float((P[mask] * np.log(P[mask] / Q[mask])).sum())
    return grad, kl
