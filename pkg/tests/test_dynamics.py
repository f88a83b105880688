import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from sgdgeom.basis import parse_basis
from sgdgeom.dynamics import (BoundUndefined, DivergenceError, RegimeNotApplicable,
                              SGDBasisRegressor, StepSizeError, Trajectory, closed_form_solution,
                              geodesic_flow, gibbs_oracle, order_bound, potential_phi,
                              potential_phi_gradient, sgd_simulate, stability_classify,
                              stationary_variance_experiment)
from sgdgeom.model import generate_dataset
from sgdgeom.moments import estimate_a2

Q_A2 = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 3.0]])


def _flow_error(A, d0, h, t_final):
    n = int(round(t_final / h))
    t = np.linspace(0, n * h, n + 1)
    traj = geodesic_flow(A, None, d0, 0.0, None, t)
    closed = np.array([closed_form_solution(A, d0, s) for s in t])
    return float(np.max(np.abs(traj.states - closed)))


# -- SGD ----------------------------------------------------------------------

def test_full_batch_loss_non_increasing():
    basis = parse_basis("1,x")
    d = generate_dataset(basis, [0.3, -0.2], 200, 0.0, seed=1)
    traj = sgd_simulate(d, basis, None, [2.0, 1.0], 0.1, 200, 300)
    assert np.all(np.diff(traj.losses) <= 1e-15)


def test_sgd_settles_within_gibbs_spread():
    basis = parse_basis("1,x")
    bar = np.array([0.3, -0.2])
    d = generate_dataset(basis, bar, 100_000, 0.1, seed=2)
    traj = sgd_simulate(d, basis, None, [0.0, 0.0], 0.01, 32, 10_000, seed=3)
    beta = 2 * 32 / 0.01
    sd = math.sqrt(1 / (2 * beta))  # A = I for this basis
    assert np.max(np.abs(traj.states[-1] - bar)) <= 5 * sd


def test_sgd_deterministic():
    basis = parse_basis("1,x")
    d = generate_dataset(basis, [0.3, -0.2], 1000, 0.1, seed=4)
    a = sgd_simulate(d, basis, None, [0, 0], 0.01, 8, 500, seed=9)
    b = sgd_simulate(d, basis, None, [0, 0], 0.01, 8, 500, seed=9)
    assert a.states.tobytes() == b.states.tobytes()


def test_divergence_guard_keeps_partial_trajectory():
    basis = parse_basis("1,x")
    d = generate_dataset(basis, [0.3, -0.2], 100, 0.1, seed=5)
    with pytest.raises(DivergenceError) as info:
        sgd_simulate(d, basis, None, [1.0, 1.0], 5.0, 100, 10_000)
    assert info.value.trajectory is not None and len(info.value.trajectory) > 1


def test_sgd_rejects_bad_inputs():
    basis = parse_basis("x")
    d = generate_dataset(basis, [1.0], 10, 0.1)
    with pytest.raises(ValueError):
        sgd_simulate(d, basis, None, [0.0], -0.1, 1, 10)
    with pytest.raises(ValueError):
        sgd_simulate(d, basis, None, [0.0], 0.1, 11, 10)


def test_trajectory_csv(tmp_path):
    traj = Trajectory([0.0, 0.5], [[1.0, 2.0], [3.0, 4.0]], [0.1, 0.2])
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,alpha_1,alpha_2,loss"
    assert lines[2] == "0.5,3.0,4.0,0.2"
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [[1.0], [2.0]])


def test_regressor_api():
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    y = 0.3 + 0.5 * x
    reg = SGDBasisRegressor(basis="1,x", eta=0.05, batch_size=16, n_epochs=3000, seed=1)
    assert clone(reg).get_params() == reg.get_params()
    reg.fit(x.reshape(-1, 1), y)
    np.testing.assert_allclose(reg.coef_, [0.3, 0.5], atol=1e-6)
    assert reg.score(x.reshape(-1, 1), y) > 0.999999
    assert reg.predict([[1.0]]).shape == (1,)
    assert reg.stationary_covariance().shape == (2, 2)


# -- flow and closed form ----------------------------------------------------------

def test_flow_fixed_point():
    traj = geodesic_flow(Q_A2, None, np.zeros(3), 0.0, None, np.linspace(0, 1, 11), [1, 2, 3])
    np.testing.assert_array_equal(traj.states, np.tile([1.0, 2.0, 3.0], (11, 1)))


@pytest.mark.parametrize("A", [np.eye(1), np.eye(2), Q_A2])
def test_flow_matches_closed_form(A):
    d0 = np.linspace(0.3, -0.2, A.shape[0])
    assert _flow_error(A, d0, 1e-3, 5.0) <= 1e-6


def test_step_halving_fourth_order():
    d0 = np.array([0.3, -0.2, 0.1])
    ratio = _flow_error(Q_A2, d0, 0.02, 5.0) / _flow_error(Q_A2, d0, 0.01, 5.0)
    assert 12 <= ratio <= 20


def test_flow_instability_detected():
    with pytest.raises(StepSizeError):
        geodesic_flow(np.eye(1) * 100, None, [1.0], 0.0, None, [0.0, 0.5])


def test_random_psd_flow_equivalence(rng):
    for _ in range(50):
        K = int(rng.integers(1, 5))
        B = rng.normal(size=(K, K))
        A = B @ B.T / K + 0.1 * np.eye(K)
        d0 = rng.normal(size=K)
        h = min(1e-2, 0.01 / np.linalg.eigvalsh(A).max())
        assert _flow_error(A, d0, h, 1.0) <= 1e-6


def test_closed_form_values():
    np.testing.assert_array_equal(closed_form_solution(Q_A2, [1.0, 2.0, 3.0], 0.0), [1, 2, 3])
    assert closed_form_solution([[1.0]], [1.0], 1.0, "flow")[0] == pytest.approx(0.135335, abs=1e-6)
    assert closed_form_solution([[1.0]], [1.0], 1.0, "paper")[0] == pytest.approx(math.exp(-1))
    with pytest.raises(ValueError):
        closed_form_solution([[1.0]], [1.0], 1.0, "other")


# -- stability ---------------------------------------------------------------------

def test_canonical_stability_labels():
    rep = stability_classify(Q_A2)
    assert rep.classification == "stable"
    np.testing.assert_allclose(sorted(z.real for z in rep.eigenvalues),
                               [2 - math.sqrt(2), 1, 2 + math.sqrt(2)], rtol=1e-12)
    assert stability_classify(np.diag([1.0, -1.0])).classification == "unstable"
    assert stability_classify(np.ones((2, 2))).classification == "marginal"


def test_limit_cycle_is_marginal():
    assert stability_classify([[0.0, 1.0], [-1.0, 0.0]]).classification == "marginal"


@given(arrays(float, (3, 3), elements=st.floats(-5, 5)), st.floats(1e-3, 1e3))
def test_stability_scale_invariant(M, s):
    lam = np.linalg.eigvals(M).real
    if np.min(np.abs(lam)) < 1e-6 or np.min(np.abs(lam * s)) < 1e-6:
        return
    assert stability_classify(M).classification == stability_classify(s * M).classification


# -- stationary variance --------------------------------------------------------------

def test_gibbs_oracle_covariance():
    A = np.array([[1.0, 0.3], [0.3, 2.0]])
    beta = 50.0
    s = gibbs_oracle(A, beta, 100_000, seed=1)
    np.testing.assert_allclose(np.cov(s, rowvar=False), np.linalg.inv(2 * beta * A), rtol=0.05,
                               atol=2e-4)


@pytest.mark.slow
def test_stationary_variance_single_dimension():
    rep = stationary_variance_experiment("x", 0.5, [0.002, 0.001], [1], 100_000, 50_000, seed=3,
                                         N=100_000)
    v = [p["covariance"][0][0] for p in rep.points]
    oracle = [p["oracle_covariance"][0][0] for p in rep.points]
    for p in rep.points:
        assert p["variance_rel_error"] <= 0.2
    # doubling beta halves the variance
    assert v[1] / v[0] == pytest.approx(0.5, rel=0.2)
    assert oracle[1] == pytest.approx(1 / (2 * 2000), rel=0.02)
    assert rep.slope_logdet_vs_logbeta == pytest.approx(-1, abs=0.15)


@pytest.mark.slow
def test_stationary_variance_two_dimensions_isotropic():
    rep = stationary_variance_experiment("1,x", 0.5, [0.01, 0.001], [1], 40_000, 20_000, seed=4,
                                         N=100_000)
    for p in rep.points:
        M = np.array(p["beta_sigma_A"])
        assert abs(M[0, 1]) <= 0.1 * np.mean(np.diag(M))
    assert rep.slope_logdet_vs_logbeta == pytest.approx(-2, abs=0.15)
    assert rep.max_isotropy_distance <= 0.2


def test_stationary_variance_preconditions():
    with pytest.raises(ValueError):
        stationary_variance_experiment("x", 0.5, [0.6], [1], 100, 50)
    with pytest.raises(ValueError):
        stationary_variance_experiment("x", 0.5, [0.01], [1], 100, 100)


# -- order bound and potential -----------------------------------------------------------

def test_order_bound_value():
    val = order_bound([[1.0]], [[-0.01]], [[2.0]], 0.1)
    assert val == pytest.approx(math.sqrt(0.0001 / 3.98), rel=1e-12)
    assert val == pytest.approx(5.012e-3, abs=1e-6)


def test_order_bound_errors():
    with pytest.raises(RegimeNotApplicable):
        order_bound(None, [[1.0]], [[2.0]], 0.1)
    with pytest.raises(BoundUndefined):
        order_bound([[1.0]], [[-0.01]], [[0.0]], 0.1)


def test_potential_values():
    assert potential_phi([[1.0]], [0.0], [1.0], 1.0) == pytest.approx(0.5 * math.log(2 * math.pi) + 0.5)
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    beta = 3.0
    at_mean = potential_phi(S, [1.0, 2.0], [1.0, 2.0], beta)
    assert at_mean == pytest.approx((np.log(np.linalg.det(S)) + np.log(2 * np.pi)) / beta)
    with pytest.raises(ValueError):
        potential_phi(np.zeros((2, 2)), [0, 0], [0, 0], 1.0)


def test_potential_gradient_matches_fd(rng):
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    m = np.array([0.1, -0.4])
    a = rng.normal(size=2)
    beta = 2.5
    h = 1e-6
    fd = [(potential_phi(S, m, a + h * e, beta) - potential_phi(S, m, a - h * e, beta)) / (2 * h)
          for e in np.eye(2)]
    np.testing.assert_allclose(potential_phi_gradient(S, m, a, beta), fd, atol=1e-6)
    coupled = potential_phi_gradient(S, m, a, beta, variant="coupled")
    np.testing.assert_allclose(coupled, 2 * np.asarray(fd), atol=2e-6)
