import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdgeom.basis import parse_basis
from sgdgeom.complexity import (DiscreteProcess, action, action_series, complexity,
                                information_flow, potential_v, theorem2_residual)
from sgdgeom.curvature import MetricField
from sgdgeom.dynamics import Trajectory, dinf_field_from, geodesic_flow
from sgdgeom.model import generate_dataset, loss_and_gradients
from sgdgeom.moments import estimate_a2, estimate_a4

B2 = parse_basis("1,x")
A2 = estimate_a2(B2, exact=True)
A4 = estimate_a4(B2, exact=True)


def _still(n=20, K=2):
    return Trajectory(np.linspace(0, 1, n), np.tile(np.arange(1.0, K + 1), (n, 1)))


def _line(T, n, v=1.0):
    t = np.linspace(0, T, n)
    return Trajectory(t, (v * t)[:, None])


def test_potential_zero_for_stationary_path():
    np.testing.assert_allclose(potential_v(_still(), lambda a: np.eye(2)), 0.0, atol=1e-24)


def test_potential_constant_velocity():
    V = potential_v(_line(3.0, 301, v=0.7), lambda a: np.array([[2.5]]))
    assert V[-1] == pytest.approx(2.5 * 0.49 * 3.0, abs=1e-8)


def test_potential_quadrature_order():
    # V for alpha = t^2 / 2 on [0, 1] with H = 1 is exactly 1/3
    def err(n):
        t = np.linspace(0, 1, n)
        traj = Trajectory(t, (0.5 * t**2)[:, None])
        return abs(potential_v(traj, lambda a: np.eye(1), velocities=t[:, None])[-1] - 1 / 3)

    assert err(201) <= err(101) / 4 * 1.05


def test_action_zero_for_stationary_path():
    assert action(_still(), MetricField(A2, A4, 0.01, 0.1), np.zeros(20)) == pytest.approx(0.0, abs=1e-13)


def test_action_arc_length():
    assert action(_line(2.0, 101), None, np.zeros(101)) == pytest.approx(2.0, abs=1e-8)


def test_action_uses_metric():
    mf = MetricField(estimate_a2(parse_basis("x"), exact=True),
                     estimate_a4(parse_basis("x"), exact=True), 0.1, 0.5)
    moving = Trajectory(np.linspace(0, 1, 11), np.linspace(0, 1, 11)[:, None] * 1e-3)
    # a positive semidefinite D can only lengthen the path
    assert action(moving, mf, np.zeros(11)) >= action(moving, None, np.zeros(11))


def _flow(dt, T=2.0, eps=0.01, sigma=0.1):
    n = int(round(T / dt))
    t = np.linspace(0, n * dt, n + 1)
    return geodesic_flow(A2, None, [0.05, 0.05], eps, dinf_field_from(A2, A4, None, sigma), t)


def test_action_step_convergence():
    mf = MetricField(A2, A4, 0.01, 0.1)
    H = 2 * A2.a2
    vals = []
    for dt in (1e-2, 5e-3):
        traj = _flow(dt)
        vals.append(action(traj, mf, potential_v(traj, lambda a: H)))
    assert abs(vals[0] - vals[1]) <= 1e-4 * abs(vals[1])


def test_action_additivity():
    mf = MetricField(A2, A4, 0.01, 0.1)
    traj = _flow(1e-3)
    vel = np.gradient(traj.states, traj.times, axis=0, edge_order=2)
    V = potential_v(traj, lambda a: 2 * A2.a2, vel)
    full = action(traj, mf, V, vel)
    m = len(traj) // 2
    first = Trajectory(traj.times[: m + 1], traj.states[: m + 1])
    second = Trajectory(traj.times[m:], traj.states[m:])
    parts = action(first, mf, V[: m + 1], vel[: m + 1]) + action(second, mf, V[m:], vel[m:])
    assert parts == pytest.approx(full, rel=1e-12, abs=1e-15)


def test_complexity_basics(rng):
    g = rng.normal(size=(100, 2))
    assert complexity(g, [0.0, 0.0], 0.1) == 0.0
    d = rng.normal(size=2)
    assert complexity(g, 2 * d, 0.1) == pytest.approx(4 * complexity(g, d, 0.1), rel=1e-12)
    with pytest.raises(ValueError):
        complexity(g, [1.0, 2.0, 3.0], 0.1)


@pytest.mark.slow
def test_complexity_monte_carlo_oracle():
    basis = parse_basis("x")
    d = generate_dataset(basis, [0.5], 1_000_000, 0.1, seed=2)
    _, g, _ = loss_and_gradients(d, basis, None, [0.5])
    terms = g[:, 0] ** 2 / (4 * 0.01)
    se = terms.std(ddof=1) / math.sqrt(terms.size)
    for delta in (1e-3, 1e-2, 1e-1):
        c = complexity(g, [delta], 0.1)
        assert abs(c / delta**2 - 1.0) <= 3 * se


def test_information_flow_examples():
    assert information_flow(DiscreteProcess((1,), [[1.0]])) == 0.0
    p = np.array([0.1, 0.2, 0.3, 0.4])
    assert abs(information_flow(DiscreteProcess.from_transition((2, 2), p, np.eye(4)))) <= 1e-12
    indep = DiscreteProcess((2, 2), np.full((4, 4), 1 / 16))
    assert information_flow(indep) == pytest.approx(0.0, abs=1e-12)
    corr = np.zeros((4, 4))
    corr[:, [0, 3]] = 1 / 8
    assert information_flow(DiscreteProcess((2, 2), corr)) == pytest.approx(math.log(2), abs=1e-12)


def test_information_flow_json_roundtrip(tmp_path):
    proc = DiscreteProcess((2, 2), np.full((4, 4), 1 / 16))
    path = tmp_path / "p.json"
    path.write_text(proc.to_json())
    assert information_flow(DiscreteProcess.from_json(str(path))) == information_flow(proc)


def test_normalization_enforced():
    with pytest.raises(ValueError):
        DiscreteProcess((2,), [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        DiscreteProcess((2,), [[1.5, -0.5], [0.0, 0.0]])


@st.composite
def processes(draw):
    m = draw(st.integers(1, 3))
    sizes = tuple(draw(st.integers(1, 4)) for _ in range(m))
    n = math.prod(sizes)
    w = np.array(draw(st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n)))
    if w.sum() == 0:
        w[0] = 1.0
    return DiscreteProcess(sizes, w.reshape(n, n) / w.sum())


@settings(max_examples=1000)
@given(processes())
def test_information_flow_nonnegative(proc):
    assert information_flow(proc) >= -1e-12


def test_balance_residual_stationary_path():
    mf = MetricField(A2, A4, 0.01, 0.1)
    res = theorem2_residual(_still(), mf)
    np.testing.assert_allclose(res.residual, 0.0, atol=1e-12)
    assert np.ptp(res.gap) <= 1e-12


def test_balance_residual_short_window():
    with pytest.raises(ValueError):
        theorem2_residual(_still(n=4), MetricField(A2, A4, 0.01, 0.1))


def test_balance_residual_converged_flow(tmp_path):
    traj = _flow(1e-3, T=10.0)
    win = traj.window(3.0)
    win = Trajectory(win.times - win.times[0], win.states)
    res = theorem2_residual(win, MetricField(A2, A4, 0.01, 0.1))
    assert res.terminal_residual <= 1e-3 * res.peak_dSdt
    q = len(res.gap) - len(res.gap) // 4
    assert np.all(np.diff(res.gap[q:]) <= 0)
    res.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("t,S,C,dSdt,dCdt,residual\n")


def test_action_series_starts_at_zero():
    traj = _flow(1e-2)
    S = action_series(traj, None, np.zeros(len(traj)))
    assert S[0] == 0.0 and np.all(np.diff(S) >= 0)
