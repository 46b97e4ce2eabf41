"""Learned channel graphs: dynamic adjacency, graph regulariser, scaled
Laplacian and Chebyshev graph convolution.

All functions accept a single graph (``psi`` of shape ``(N, C)``) or a batch
of per-sample graphs (``(B, N, C)``) and return :class:`Tensor` values so
they compose with the rest of the model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dsagc import kernels
from dsagc.autodiff import Tensor, as_tensor, log_kink
from dsagc.errors import InputError, NumericalError, ShapeError

ZERO_LAPLACIAN_NORM = 1e-12
MAX_SQUARINGS = 20
ESCALATION_STEP = 7


def _batched(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 2:
        return t.reshape((1,) + t.shape), True
    if t.ndim != 3:
        raise ShapeError(f"expected (N, C) or (B, N, C), got shape {t.shape}")
    return t, False


def dynamic_adjacency(psi, w) -> Tensor:
    """Row-stochastic adjacency ``softmax_k(-ReLU(w . |psi_j - psi_k|))``.

    >>> A = dynamic_adjacency(np.array([[0.0], [1.0], [3.0]]), np.array([1.0]))
    >>> round(float(A.data[0, 0]), 5)
    0.70538
    """
    psi, w = as_tensor(psi), as_tensor(w)
    if not (np.isfinite(psi.data).all() and np.isfinite(w.data).all()):
        raise InputError("dynamic_adjacency received non-finite node features or weights")
    if w.ndim != 1 or w.shape[0] != psi.shape[-1]:
        raise ShapeError(f"w must have length {psi.shape[-1]}, got shape {w.shape}")
    psi_b, single = _batched(psi)
    x = np.ascontiguousarray(psi_b.data)
    wv = np.ascontiguousarray(w.data)
    A, scores = kernels.adjacency_forward(x, wv)
    n = scores.shape[-1]
    log_kink(scores[:, ~np.eye(n, dtype=bool)])

    def backward(g):
        gpsi, gw = kernels.adjacency_backward(
            x, wv, A, scores, np.ascontiguousarray(g), psi_b.requires_grad
        )
        return (gpsi if psi_b.requires_grad else None), gw

    out = Tensor.make(A, (psi_b, w), backward)
    return out.reshape(A.shape[1:]) if single else out


def pairwise_sqdist(psi: Tensor) -> Tensor:
    sq = (psi * psi).sum(axis=-1)
    gram = psi @ psi.swapaxes(-1, -2)
    return sq.reshape(sq.shape + (1,)) + sq.reshape(sq.shape[:-1] + (1, sq.shape[-1])) - 2.0 * gram


def graph_reg_loss(psi, A, lambda_reg: float) -> Tensor:
    """``lambda * sum_jk ||psi_j - psi_k||^2 A_jk + ||A||_F^2``; batch mean for 3-D input."""
    psi, A = as_tensor(psi), as_tensor(A)
    per_graph = lambda_reg * (pairwise_sqdist(psi) * A).sum(axis=(-2, -1)) + (A * A).sum(
        axis=(-2, -1)
    )
    return per_graph.mean() if per_graph.ndim else per_graph


def _squared_operator(L: np.ndarray, squarings: int) -> np.ndarray:
    M = L.copy()
    for _ in range(squarings):
        M /= np.linalg.norm(M, axis=(-2, -1), keepdims=True)
        M = M @ M
    return np.ascontiguousarray(M)


def lambda_max(L, tol: float = 1e-9, max_iter: int = 500, squarings: int = 6) -> Tensor:
    """Largest Laplacian eigenvalue per graph by power iteration.

    The iteration runs on ``L^(2^squarings)`` (same top eigenvector, widened
    spectral gap); convergence is tested on the Rayleigh quotient of ``L``
    and on the step size of the unit eigenvector, which sets the gradient accuracy.
    Graphs that miss the iteration budget are retried on higher powers, up
    to ``L^(2^20)``, before a :class:`NumericalError` is raised.
    Graphs whose Laplacian norm is below 1e-12 get ``lambda_max = 1``.
    The gradient is ``v v^T`` with ``v`` the converged unit eigenvector.
    """
    L = as_tensor(L)
    Lb = np.ascontiguousarray(L.data.reshape((-1,) + L.shape[-2:]))
    B, N, _ = Lb.shape
    norms = np.linalg.norm(Lb, axis=(-2, -1))
    degenerate = norms < ZERO_LAPLACIAN_NORM
    lam = np.ones(B)
    vecs = np.zeros((B, N))
    live = np.flatnonzero(~degenerate)
    pending = live
    M = _squared_operator(np.ascontiguousarray(Lb[live]), squarings) if live.size else None
    level = squarings
    while pending.size:
        Ll = np.ascontiguousarray(Lb[pending])
        lam_l, v_l, iters = kernels.power_iteration(Ll, M if level else Ll, tol, max_iter)
        ok = iters <= max_iter
        lam[pending[ok]] = lam_l[ok]
        vecs[pending[ok]] = v_l[ok]
        if ok.all():
            break
        if level >= MAX_SQUARINGS:
            raise NumericalError(
                f"power iteration did not converge within {max_iter} iterations "
                f"({int((~ok).sum())} graph(s), operator L^{2 ** level})"
            )
        # nearly degenerate top eigenvalues: widen the gap further and retry
        pending = pending[~ok]
        M = _squared_operator(M[~ok] if level else Ll[~ok], ESCALATION_STEP)
        level += ESCALATION_STEP
    outer = vecs[:, :, None] * vecs[:, None, :]

    def backward(g):
        return ((np.reshape(g, (-1, 1, 1)) * outer).reshape(L.shape),)

    return Tensor.make(lam.reshape(L.shape[:-2]), (L,), backward)


def laplacian(A) -> Tensor:
    """``D - A_sym`` with ``A_sym = (A + A^T) / 2`` and ``D`` its degree matrix."""
    A = as_tensor(A)
    A_sym = 0.5 * (A + A.swapaxes(-1, -2))
    n = A.shape[-1]
    deg = A_sym.sum(axis=-1)
    return deg.reshape(deg.shape + (1,)) * np.eye(n) - A_sym


def scaled_laplacian(A, tol: float = 1e-9, max_iter: int = 500, squarings: int = 6):
    """Return ``(L_tilde, lambda_max)`` with ``L_tilde = 2 L / lambda_max - I``."""
    A = as_tensor(A)
    L = laplacian(A)
    lam = lambda_max(L, tol=tol, max_iter=max_iter, squarings=squarings)
    n = A.shape[-1]
    scale = lam.reshape(lam.shape + (1, 1))
    return (2.0 * L) / scale - np.eye(n), lam


def cheb_conv(x, L_tilde, theta) -> Tensor:
    """``sum_p theta_p T_p(L_tilde) x`` via the three-term Chebyshev recurrence."""
    x, L_tilde, theta = as_tensor(x), as_tensor(L_tilde), as_tensor(theta)
    if theta.ndim != 1 or theta.shape[0] < 1:
        raise ShapeError(f"theta must be a non-empty vector, got shape {theta.shape}")
    xb, single = _batched(x)
    Lb = L_tilde if L_tilde.ndim == 3 else L_tilde.reshape((1,) + L_tilde.shape)
    if Lb.shape[0] != xb.shape[0] or Lb.shape[1] != xb.shape[1]:
        raise ShapeError(f"Laplacian shape {L_tilde.shape} incompatible with x shape {x.shape}")
    xd = np.ascontiguousarray(xb.data)
    Ld = np.ascontiguousarray(Lb.data)
    th = np.ascontiguousarray(theta.data)
    out, terms = kernels.cheb_forward(xd, Ld, th)

    def backward(g):
        return kernels.cheb_backward(Ld, th, terms, np.ascontiguousarray(g))

    res = Tensor.make(out, (xb, Lb, theta), backward)
    return res.reshape(out.shape[1:]) if single else res


@dataclass
class LearnedGraph:
    """Per-sample graph state: node features, adjacency and Chebyshev filter."""

    psi: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    lambda_reg: float = 0.01
    A: np.ndarray = field(init=False)
    L_tilde: np.ndarray = field(init=False)
    lam_max: float = field(init=False)

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        self.A = dynamic_adjacency(self.psi, self.w).data
        Lt, lam = scaled_laplacian(self.A)
        self.L_tilde, self.lam_max = Lt.data, float(lam.data)

    @property
    def phi_order(self) -> int:
        return len(self.theta)

    def loss(self) -> float:
        return float(graph_reg_loss(self.psi, self.A, self.lambda_reg).data)

    def convolve(self, x=None) -> np.ndarray:
        return cheb_conv(self.psi if x is None else x, self.L_tilde, self.theta).data
