# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as dsagc._pykernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt, INFINITY

cnp.import_array()

BACKEND = "cython"


def start_vector(Py_ssize_t n):
    from dsagc._pykernels import start_vector as _sv
    return _sv(n)


def adjacency_forward(double[:, :, ::1] psi, double[::1] w):
    cdef Py_ssize_t B = psi.shape[0], N = psi.shape[1], C = psi.shape[2]
    cdef Py_ssize_t b, j, k, c
    cdef double s, tot
    A_arr = np.empty((B, N, N))
    S_arr = np.empty((B, N, N))
    cdef double[:, :, ::1] A = A_arr
    cdef double[:, :, ::1] S = S_arr
    with nogil:
        for b in range(B):
            for j in range(N):
                S[b, j, j] = 0.0
                for k in range(j + 1, N):
                    s = 0.0
                    for c in range(C):
                        s = s + w[c] * fabs(psi[b, j, c] - psi[b, k, c])
                    S[b, j, k] = s
                    S[b, k, j] = s
            for j in range(N):
                tot = 0.0
                for k in range(N):
                    s = S[b, j, k]
                    if s > 0.0:
                        A[b, j, k] = exp(-s)
                    else:
                        A[b, j, k] = 1.0
                    tot = tot + A[b, j, k]
                for k in range(N):
                    A[b, j, k] = A[b, j, k] / tot
    return A_arr, S_arr


def adjacency_backward(double[:, :, ::1] psi, double[::1] w, double[:, :, ::1] A,
                       double[:, :, ::1] S, double[:, :, ::1] gA, bint need_psi=True):
    cdef Py_ssize_t B = psi.shape[0], N = psi.shape[1], C = psi.shape[2]
    cdef Py_ssize_t b, j, k, c
    cdef double rowdot, gs, d, t
    gpsi_arr = np.zeros((B, N, C))
    gw_arr = np.zeros(C)
    cdef double[:, :, ::1] gpsi = gpsi_arr
    cdef double[::1] gw = gw_arr
    with nogil:
        for b in range(B):
            for j in range(N):
                rowdot = 0.0
                for k in range(N):
                    rowdot = rowdot + gA[b, j, k] * A[b, j, k]
                for k in range(N):
                    if S[b, j, k] <= 0.0:
                        continue
                    gs = -A[b, j, k] * (gA[b, j, k] - rowdot)
                    if not need_psi:
                        for c in range(C):
                            gw[c] += gs * fabs(psi[b, j, c] - psi[b, k, c])
                        continue
                    for c in range(C):
                        d = psi[b, j, c] - psi[b, k, c]
                        if d > 0.0:
                            gw[c] += gs * d
                            t = gs * w[c]
                        elif d < 0.0:
                            gw[c] -= gs * d
                            t = -gs * w[c]
                        else:
                            continue
                        gpsi[b, j, c] += t
                        gpsi[b, k, c] -= t
    return gpsi_arr, gw_arr


def power_iteration(double[:, :, ::1] L, double[:, :, ::1] M, double tol=1e-9,
                    Py_ssize_t max_iter=500, double vtol=1e-10):
    cdef Py_ssize_t B = L.shape[0], N = L.shape[1]
    cdef Py_ssize_t b, i, j, it
    cdef double cur, old, nrm, acc, dv, d
    v_arr = np.tile(start_vector(N), (B, 1))
    lam_arr = np.zeros(B)
    it_arr = np.full(B, max_iter + 1, dtype=np.int64)
    cdef double[:, ::1] v = v_arr
    cdef double[::1] lam = lam_arr
    cdef long long[::1] iters = it_arr
    cdef double[::1] y = np.empty(N)
    with nogil:
        for b in range(B):
            old = INFINITY
            dv = INFINITY
            for it in range(1, max_iter + 1):
                cur = 0.0
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc = acc + L[b, i, j] * v[b, j]
                    cur = cur + v[b, i] * acc
                lam[b] = cur
                if (fabs(cur - old) <= tol * (fabs(cur) if fabs(cur) > 1.0 else 1.0)
                        and dv <= vtol):
                    iters[b] = it
                    break
                old = cur
                nrm = 0.0
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc = acc + M[b, i, j] * v[b, j]
                    y[i] = acc
                    nrm = nrm + acc * acc
                nrm = sqrt(nrm)
                if nrm == 0.0:
                    iters[b] = it
                    break
                dv = 0.0
                for i in range(N):
                    d = y[i] / nrm
                    dv = dv + (d - v[b, i]) * (d - v[b, i])
                    v[b, i] = d
                dv = sqrt(dv)
    return lam_arr, v_arr, it_arr


cdef inline void _matmul_nc(double[:, ::1] M, double[:, ::1] X, double[:, ::1] out,
                            double alpha, bint transpose) noexcept nogil:
    # out += alpha * op(M) @ X, with op = transpose when requested
    cdef Py_ssize_t N = M.shape[0], C = X.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double m
    for i in range(N):
        for j in range(N):
            m = M[j, i] if transpose else M[i, j]
            if m == 0.0:
                continue
            m = alpha * m
            for c in range(C):
                out[i, c] += m * X[j, c]


def cheb_forward(double[:, :, ::1] x, double[:, :, ::1] Lt, double[::1] theta):
    cdef Py_ssize_t P = theta.shape[0], B = x.shape[0], N = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t p, b, n, c
    terms_arr = np.zeros((P, B, N, C))
    out_arr = np.zeros((B, N, C))
    cdef double[:, :, :, ::1] T = terms_arr
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            T[0, b, :, :] = x[b, :, :]
            if P > 1:
                _matmul_nc(Lt[b], T[0, b], T[1, b], 1.0, False)
            for p in range(2, P):
                _matmul_nc(Lt[b], T[p - 1, b], T[p, b], 2.0, False)
                for n in range(N):
                    for c in range(C):
                        T[p, b, n, c] -= T[p - 2, b, n, c]
            for p in range(P):
                for n in range(N):
                    for c in range(C):
                        out[b, n, c] += theta[p] * T[p, b, n, c]
    return out_arr, terms_arr


def cheb_backward(double[:, :, ::1] Lt, double[::1] theta, double[:, :, :, ::1] terms,
                  double[:, :, ::1] g):
    cdef Py_ssize_t P = theta.shape[0], B = g.shape[0], N = g.shape[1], C = g.shape[2]
    cdef Py_ssize_t p, b, i, j, c
    cdef double acc
    G_arr = np.empty((P, B, N, C))
    gLt_arr = np.zeros((B, N, N))
    gtheta_arr = np.zeros(P)
    cdef double[:, :, :, ::1] G = G_arr
    cdef double[:, :, ::1] gLt = gLt_arr
    cdef double[::1] gtheta = gtheta_arr
    with nogil:
        for p in range(P):
            for b in range(B):
                for i in range(N):
                    for c in range(C):
                        gtheta[p] += terms[p, b, i, c] * g[b, i, c]
                        G[p, b, i, c] = theta[p] * g[b, i, c]
        for b in range(B):
            for p in range(P - 1, 1, -1):
                _matmul_nc(Lt[b], G[p, b], G[p - 1, b], 2.0, True)
                for i in range(N):
                    for c in range(C):
                        G[p - 2, b, i, c] -= G[p, b, i, c]
                for i in range(N):
                    for j in range(N):
                        acc = 0.0
                        for c in range(C):
                            acc = acc + G[p, b, i, c] * terms[p - 1, b, j, c]
                        gLt[b, i, j] += 2.0 * acc
            if P > 1:
                _matmul_nc(Lt[b], G[1, b], G[0, b], 1.0, True)
                for i in range(N):
                    for j in range(N):
                        acc = 0.0
                        for c in range(C):
                            acc = acc + G[1, b, i, c] * terms[0, b, j, c]
                        gLt[b, i, j] += acc
    return np.ascontiguousarray(G_arr[0]), gLt_arr, gtheta_arr


def tsne_gradient(double[:, ::1] P, double[:, ::1] Y):
    cdef Py_ssize_t n = Y.shape[0], d = Y.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dist, q, tot = 0.0, kl = 0.0, wij
    num_arr = np.zeros((n, n))
    grad_arr = np.zeros((n, d))
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] grad = grad_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dist = 0.0
                for k in range(d):
                    dist = dist + (Y[i, k] - Y[j, k]) * (Y[i, k] - Y[j, k])
                q = 1.0 / (1.0 + dist)
                num[i, j] = q
                num[j, i] = q
                tot = tot + 2.0 * q
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                q = num[i, j] / tot
                if q < 1e-12:
                    q = 1e-12
                wij = (P[i, j] - q) * num[i, j]
                for k in range(d):
                    grad[i, k] += 4.0 * wij * (Y[i, k] - Y[j, k])
                if P[i, j] > 0.0:
                    kl = kl + P[i, j] * log(P[i, j] / q)
    return grad_arr, kl
