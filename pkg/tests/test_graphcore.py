import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsagc import graphcore as gc
from dsagc.autodiff import Tensor
from dsagc.errors import InputError, NumericalError, ShapeError
from helpers import cheb_oracle, check_grads, reg_oracle

# Hand-computed three-node example: psi = [[0], [1], [3]], w = [1].
A3 = np.array([[0.7053845126982412, 0.25949646034241913, 0.03511902695933973],
               [0.24472847105479764, 0.6652409557748218, 0.09003057317038046],
               [0.04201006613406605, 0.11419519938459449, 0.8437947344813395]])
REG3 = 1.8236299693818432  # lambda = 0.01, brute-force double loop
PSI3 = np.array([[0.0], [1.0], [3.0]])


def random_graph(rng, n, c=3):
    psi = rng.standard_normal((n, c))
    w = rng.uniform(0.2, 2.0, c)
    return psi, w, gc.dynamic_adjacency(psi, w).data


# ------------------------------------------------------------------ adjacency


def test_three_node_adjacency():
    A = gc.dynamic_adjacency(PSI3, np.array([1.0])).data
    assert A[0, 0] == pytest.approx(np.exp(0) / (1 + np.exp(-1) + np.exp(-3)), abs=1e-12)
    assert A[0, 0] == pytest.approx(0.70538, abs=5e-6)
    np.testing.assert_allclose(A, A3, atol=1e-14)


def test_uniform_cases(rng):
    psi = np.tile(rng.standard_normal(4), (6, 1))
    np.testing.assert_allclose(gc.dynamic_adjacency(psi, np.ones(4)).data, 1 / 6, atol=1e-15)
    np.testing.assert_allclose(
        gc.dynamic_adjacency(rng.standard_normal((5, 4)), np.zeros(4)).data, 0.2, atol=1e-15)


def test_negative_weights_clip_to_uniform(rng):
    A = gc.dynamic_adjacency(rng.standard_normal((5, 3)), -np.ones(3)).data
    np.testing.assert_allclose(A, 0.2, atol=1e-15)


def test_adjacency_errors():
    with pytest.raises(InputError):
        gc.dynamic_adjacency(np.array([[np.nan], [0.0]]), np.ones(1))
    with pytest.raises(ShapeError):
        gc.dynamic_adjacency(np.zeros((3, 2)), np.ones(3))


@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 5)),
              elements=st.floats(-10, 10)),
       st.floats(0, 5))
@settings(max_examples=200, deadline=None)
def test_adjacency_rows_sum_to_one(psi, scale):
    A = gc.dynamic_adjacency(psi, np.full(psi.shape[1], scale)).data
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-6)
    assert (A > 0).all() and (A <= 1).all()


def test_batched_adjacency_matches_single(rng):
    psi, w = rng.standard_normal((4, 6, 3)), rng.random(3)
    A = gc.dynamic_adjacency(psi, w).data
    for i in range(4):
        np.testing.assert_allclose(A[i], gc.dynamic_adjacency(psi[i], w).data, atol=1e-15)


def test_adjacency_gradients(rng):
    psi, w = rng.standard_normal((2, 6, 3)), rng.uniform(0.3, 1.5, 3)
    G = rng.standard_normal((2, 6, 6))
    check_grads(lambda p, ww: (gc.dynamic_adjacency(p, ww) * G).sum(), psi, w)


# ------------------------------------------------------------------ regulariser


def test_graph_reg_three_node():
    A = gc.dynamic_adjacency(PSI3, np.array([1.0]))
    val = float(gc.graph_reg_loss(PSI3, A, 0.01).data)
    assert val == pytest.approx(REG3, abs=1e-9)
    assert reg_oracle(PSI3, A.data, 0.01) == pytest.approx(REG3, abs=1e-12)


def test_graph_reg_trivial_cases(rng):
    psi = np.ones((4, 2))
    A = gc.dynamic_adjacency(psi, np.ones(2))
    assert float(gc.graph_reg_loss(psi, A, 1.0).data) == pytest.approx(1.0, abs=1e-12)
    psi, w, A = random_graph(rng, 5)
    assert float(gc.graph_reg_loss(psi, A, 0.0).data) == pytest.approx((A**2).sum(), abs=1e-12)


def test_uniform_frobenius_is_one_over_n():
    # ||A||_F^2 = N * N * (1/N)^2 = 1 for every N when A is uniform
    for n in (1, 2, 5):
        A = np.full((n, n), 1.0 / n)
        assert float(gc.graph_reg_loss(np.zeros((n, 1)), A, 1.0).data) == pytest.approx(1.0)


@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_graph_reg_matches_double_loop(n, seed):
    rng = np.random.default_rng(seed)
    psi, w, A = random_graph(rng, n)
    lam = float(rng.uniform(0, 1))
    assert float(gc.graph_reg_loss(psi, A, lam).data) == pytest.approx(
        reg_oracle(psi, A, lam), abs=1e-9)


@given(st.integers(0, 2**31 - 1), st.floats(0, 10), st.floats(0, 10))
@settings(max_examples=40, deadline=None)
def test_graph_reg_monotone_in_lambda(seed, l1, l2):
    psi, w, A = random_graph(np.random.default_rng(seed), 6)
    lo, hi = sorted((l1, l2))
    assert float(gc.graph_reg_loss(psi, A, hi).data) >= float(gc.graph_reg_loss(psi, A, lo).data)


def test_graph_reg_gradients(rng):
    psi, w = rng.standard_normal((6, 3)), rng.uniform(0.3, 1.5, 3)
    check_grads(lambda p, ww: gc.graph_reg_loss(p, gc.dynamic_adjacency(p, ww), 0.1), psi, w)


# ------------------------------------------------------------------ Laplacian


def test_identity_adjacency_guard():
    Lt, lam = gc.scaled_laplacian(np.eye(4))
    assert float(lam.data) == 1.0
    np.testing.assert_array_equal(Lt.data, -np.eye(4))


def test_two_node_uniform():
    A = np.full((2, 2), 0.5)
    np.testing.assert_allclose(gc.laplacian(A).data, [[0.5, -0.5], [-0.5, 0.5]])
    Lt, lam = gc.scaled_laplacian(A)
    assert float(lam.data) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(Lt.data, [[0.0, -1.0], [-1.0, 0.0]], atol=1e-12)


@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_scaled_spectrum_in_unit_interval(n, seed):
    psi, w, A = random_graph(np.random.default_rng(seed), n)
    Lt, lam = gc.scaled_laplacian(A)
    assert np.array_equal(Lt.data, Lt.data.T)
    ev = np.linalg.eigvalsh(Lt.data)
    assert ev.min() >= -1 - 1e-6 and ev.max() <= 1 + 1e-6
    assert float(lam.data) == pytest.approx(np.linalg.eigvalsh(gc.laplacian(A).data)[-1],
                                            rel=1e-8)


def test_lambda_max_near_degenerate_top_pair():
    # eigenvalues 0.911744 and 0.911809: plain iteration stalls, escalation converges
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    ev = np.array([0.0, 0.1, 0.3, 0.5, 0.7, 0.8, 0.911744, 0.911809])
    L = Q @ np.diag(ev) @ Q.T
    lam = float(gc.lambda_max(L).data)
    assert lam == pytest.approx(0.911809, abs=1e-9)


def test_lambda_max_reports_iterations():
    # one iteration can never confirm convergence, even after every escalation
    with pytest.raises(NumericalError, match="within 1 iterations"):
        gc.lambda_max(gc.laplacian(np.full((3, 3), 1 / 3)).data + np.diag([0, 0.1, 0.2]),
                      max_iter=1)


def test_lambda_max_gradient(rng):
    psi, w, A = random_graph(rng, 6)
    L = gc.laplacian(A).data
    check_grads(lambda x: gc.lambda_max(0.5 * (x + x.swapaxes(-1, -2))), L)


# ------------------------------------------------------------------ Chebyshev


def test_cheb_identity_and_first_order(rng):
    psi, w, A = random_graph(rng, 5)
    Lt = gc.scaled_laplacian(A)[0].data
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(gc.cheb_conv(x, Lt, [1.0]).data, x, atol=1e-15)
    np.testing.assert_allclose(gc.cheb_conv(x, Lt, [0.0, 1.0]).data, Lt @ x, atol=1e-14)


def test_cheb_five_node_spectral(rng):
    psi, w, A = random_graph(rng, 5)
    Lt = gc.scaled_laplacian(A)[0].data
    x, theta = rng.standard_normal((5, 4)), rng.standard_normal(3)
    np.testing.assert_allclose(gc.cheb_conv(x, Lt, theta).data, cheb_oracle(x, Lt, theta),
                               atol=1e-8)


def test_cheb_shape_errors(rng):
    with pytest.raises(ShapeError):
        gc.cheb_conv(np.zeros((4, 2)), np.eye(5), [1.0])
    with pytest.raises(ShapeError):
        gc.cheb_conv(np.zeros((4, 2)), np.eye(4), np.zeros((2, 2)))


def test_cheb_gradients_through_laplacian(rng):
    psi, w = rng.standard_normal((6, 3)), rng.uniform(0.3, 1.5, 3)
    theta = rng.standard_normal(3)
    G = rng.standard_normal((6, 3))

    def f(p, ww, th):
        Lt, _ = gc.scaled_laplacian(gc.dynamic_adjacency(p, ww))
        return (gc.cheb_conv(p, Lt, th) * G).sum()

    check_grads(f, psi, w, theta)


def test_learned_graph():
    g = gc.LearnedGraph(PSI3, np.array([1.0]), np.array([1.0, 0.0, 0.0]), lambda_reg=0.01)
    assert g.phi_order == 3
    assert g.loss() == pytest.approx(REG3, abs=1e-9)
    np.testing.assert_allclose(g.convolve(), PSI3, atol=1e-15)
    np.testing.assert_allclose(g.A, A3, atol=1e-14)
