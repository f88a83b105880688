import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sgdgeom.coupling import ParameterMap, coupling_matrix, coupling_second_derivative, hessian
from sgdgeom.moments import estimate_a2
from sgdgeom.basis import parse_basis
from sgdgeom.model import generate_dataset, loss_and_gradients


def _product_map(mode="analytic-jacobian"):
    return ParameterMap(g=lambda w: np.array([w[0], w[0] * w[1]]), mode=mode,
                        jacobian=lambda w: np.array([[1.0, 0.0], [w[1], w[0]]]))


def test_identity_map_gives_identity():
    cm = coupling_matrix(ParameterMap.identity(3), [0.1, 2.0, -1.0])
    np.testing.assert_array_equal(cm.G, np.eye(3))


def test_product_map_matches_brute_force():
    w = np.array([1.0, 1.0])
    J = np.array([[1.0, 0.0], [1.0, 1.0]])
    oracle = J @ np.linalg.pinv(J)
    np.fill_diagonal(oracle, 1.0)
    for mode in ("analytic-jacobian", "finite-difference"):
        np.testing.assert_allclose(coupling_matrix(_product_map(mode), w).G, oracle, atol=1e-6)


def test_tall_jacobian_projector():
    # K = 3 coefficients from L = 2 weights
    pm = ParameterMap(g=lambda w: np.array([w[0], w[1], w[0] + 2 * w[1]]), mode="analytic-jacobian",
                      jacobian=lambda w: np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 2.0]]))
    cm = coupling_matrix(pm, [0.3, 0.4])
    P = cm.projector
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_array_equal(np.diag(cm.G), 1.0)
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(cm.G[off], P[off])


def test_rank_deficient_analytic_jacobian_warns():
    pm = ParameterMap(g=lambda w: np.array([w[0], w[0]]), mode="analytic-jacobian",
                      jacobian=lambda w: np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.warns(RuntimeWarning):
        cm = coupling_matrix(pm, [1.0, 2.0])
    assert cm.warnings


def test_bad_mode_rejected():
    with pytest.raises(ValueError):
        ParameterMap(g=lambda w: w, mode="symbolic")
    with pytest.raises(ValueError):
        ParameterMap(g=lambda w: w, mode="analytic-jacobian")


@pytest.mark.filterwarnings("ignore:Jacobian rank")
@given(arrays(float, 2, elements=st.floats(-3, 3)))
def test_unit_diagonal_everywhere(w):
    for mode in ("analytic-jacobian", "finite-difference"):
        G = coupling_matrix(_product_map(mode), w).G
        assert np.all(np.diag(G) == 1.0)


@given(arrays(float, 2, elements=st.floats(0.2, 3)))
def test_fd_jacobian_matches_analytic(w):
    a = _product_map("analytic-jacobian").jacobian_at(w)
    f = _product_map("finite-difference").jacobian_at(w)
    np.testing.assert_allclose(f, a, rtol=1e-6, atol=1e-9)


def test_hessian_reduces_to_2a():
    A = estimate_a2(parse_basis("1,x,x^2"), exact=True)
    np.testing.assert_array_equal(hessian(A, None, np.zeros(3)), 2 * A.a2)


def test_hessian_k1_matches_fd_of_empirical_loss():
    basis = parse_basis("x")
    d = generate_dataset(basis, [0.5], 100_000, 0.1, seed=8)
    A = estimate_a2(basis, N=100_000, seed=8)
    h = 1e-3
    f = [loss_and_gradients(d, basis, None, [0.5 + s * h])[0] for s in (-1, 0, 1)]
    fd = (f[0] - 2 * f[1] + f[2]) / h**2
    H = hessian(A)[0, 0]
    assert abs(H - fd) <= 3 * 2 * A.std_error[0, 0]


@given(arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_hessian_symmetric_without_second_derivative(B):
    A = B @ B.T
    G = 0.5 * (B + B.T)
    H = hessian(A, G)
    np.testing.assert_array_equal(H, H.T)


def test_second_derivative_vanishes_for_linear_map():
    pm = ParameterMap(g=lambda w: np.array([w[0] + w[1], w[1]]), mode="finite-difference")
    T = coupling_second_derivative(pm, [0.2, 0.7])
    np.testing.assert_allclose(T, 0.0, atol=1e-6)
