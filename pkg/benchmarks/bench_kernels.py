"""Time the compiled kernels against the pure-numpy fallback.

Shapes follow one training step: a batch of 48 graphs with 62 nodes and 5
bands, Chebyshev order 3, and a 300-point exact t-SNE gradient.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dsagc import _pykernels


def _inputs(seed: int = 0):
    rng = np.random.default_rng(seed)
    B, N, C = 48, 62, 5
    psi = rng.standard_normal((B, N, C))
    w = rng.uniform(0.5, 1.5, C)
    A, scores = _pykernels.adjacency_forward(psi, w)
    S = 0.5 * (A + A.transpose(0, 2, 1))
    L = np.ascontiguousarray(np.eye(N) * S.sum(axis=2)[:, :, None] - S)
    M = L.copy()
    for _ in range(6):
        M /= np.linalg.norm(M, axis=(1, 2), keepdims=True)
        M = M @ M
    lam = np.linalg.eigvalsh(L)[:, -1]
    Lt = np.ascontiguousarray(2 * L / lam[:, None, None] - np.eye(N))
    theta = np.array([1.0, 0.3, -0.2])
    _, terms = _pykernels.cheb_forward(psi, Lt, theta)
    Y = rng.standard_normal((300, 2))
    P = rng.random((300, 300))
    P = P + P.T
    np.fill_diagonal(P, 0.0)
    P /= P.sum()
    return {
        "adjacency_forward": lambda k: k.adjacency_forward(psi, w),
        "adjacency_backward": lambda k: k.adjacency_backward(psi, w, A, scores,
                                                             np.ones_like(A), True),
        "power_iteration": lambda k: k.power_iteration(L, np.ascontiguousarray(M), 1e-9, 500),
        "cheb_forward": lambda k: k.cheb_forward(psi, Lt, theta),
        "cheb_backward": lambda k: k.cheb_backward(Lt, theta, terms, np.ones_like(psi)),
        "tsne_gradient": lambda k: k.tsne_gradient(P, Y),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    try:
        from dsagc import _ckernels
    except ImportError:
        print("compiled kernels not built; only the numpy fallback is available")
        _ckernels = None
    print(f"{'kernel':<20}{'numpy ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, call in _inputs().items():
        t_py = min(timeit.repeat(lambda: call(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<20}{t_py:>12.3f}{'-':>12}{'-':>10}")
            continue
        t_c = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_py:>12.3f}{t_c:>12.3f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
