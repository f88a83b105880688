import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sgdgeom.basis import parse_basis
from sgdgeom.curvature import (MetricField, christoffel, curvature_report, einstein_fd,
                               einstein_tensor_closed, ricci_scalar_closed,
                               ricci_scalar_closed_loops, ricci_scalar_exact, ricci_scalar_fd,
                               ricci_tensor_fd, second_derivatives, second_derivatives_exact)
from sgdgeom.moments import estimate_a2, estimate_a4


def _moments(spec):
    b = parse_basis(spec)
    return estimate_a2(b, exact=True), estimate_a4(b, exact=True)


MOMENTS = {s: _moments(s) for s in ("x", "1,x", "1,x,x^2")}

# Frozen values (per unit epsilon), derived by hand from Gaussian moments.
CLOSED_PER_EPS = {"x": 0.0, "1,x": -16.0, "1,x,x^2": -532.0}
EXACT_PER_EPS = {"x": 0.0, "1,x": -24.0, "1,x,x^2": -1008.0}


def _field(spec, eps=0.01, sigma=0.1):
    a2, a4 = MOMENTS[spec]
    return MetricField(a2, a4, eps, sigma)


def test_metric_field_psd_shift(rng):
    mf = _field("1,x,x^2")
    for _ in range(5):
        M = mf(rng.normal(size=3))
        np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() >= 1 - 1e-8


def test_christoffel_zero_for_constant_field(rng):
    mf = _field("1,x").frozen([0.2, -0.1])
    np.testing.assert_allclose(christoffel(mf, rng.normal(size=2), 1e-3), 0.0, atol=1e-12)


def test_christoffel_zero_at_zero_epsilon(rng):
    np.testing.assert_array_equal(christoffel(_field("1,x", eps=0.0), rng.normal(size=2)), 0.0)


@given(arrays(float, 3, elements=st.floats(-2, 2)))
def test_christoffel_lower_symmetry(a):
    G = christoffel(_field("1,x,x^2"), a, 1e-3)
    np.testing.assert_array_equal(G, np.swapaxes(G, 1, 2))


def test_ricci_constant_field_is_zero():
    mf = _field("1,x").frozen([0.3, 0.1])
    assert abs(ricci_scalar_fd(mf, [0.0, 0.0], 1e-3)) < 1e-12


def test_k1_flat():
    mf = _field("x")
    assert abs(ricci_scalar_fd(mf, [0.4], 1e-3)) <= 1e-6
    assert ricci_scalar_closed(*MOMENTS["x"], 0.5) == 0.0
    assert einstein_tensor_closed(*MOMENTS["x"], 0.5).raw.tolist() == [[0.0]]


@pytest.mark.parametrize("spec", list(CLOSED_PER_EPS))
def test_closed_form_frozen_values(spec):
    assert ricci_scalar_closed(*MOMENTS[spec], 1.0) == pytest.approx(CLOSED_PER_EPS[spec])
    assert ricci_scalar_closed_loops(*MOMENTS[spec], 0.37) == pytest.approx(
        ricci_scalar_closed(*MOMENTS[spec], 0.37), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("spec", list(EXACT_PER_EPS))
@pytest.mark.parametrize("h", [1e-2, 1e-3])
def test_fd_matches_analytic_second_derivatives(spec, h):
    mf = _field(spec, eps=1.0)
    a = np.linspace(0.2, -0.3, mf.K)
    R = ricci_scalar_fd(mf, a, h)
    assert R == pytest.approx(EXACT_PER_EPS[spec], rel=1e-6, abs=1e-6)
    assert ricci_scalar_exact(*MOMENTS[spec], 1.0) == pytest.approx(EXACT_PER_EPS[spec])
    np.testing.assert_allclose(second_derivatives(mf, a, h), second_derivatives_exact(*MOMENTS[spec]),
                               rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("spec", list(MOMENTS))
def test_flat_at_zero_epsilon(spec):
    mf = _field(spec, eps=0.0)
    a = np.zeros(mf.K)
    assert ricci_scalar_fd(mf, a) == 0.0
    assert np.all(einstein_fd(mf, a) == 0.0)
    assert ricci_scalar_closed(*MOMENTS[spec], 0.0) == 0.0
    assert np.all(einstein_tensor_closed(*MOMENTS[spec], 0.0).raw == 0.0)


@pytest.mark.parametrize("spec", list(MOMENTS))
def test_fd_trace_identity(spec, rng):
    mf = _field(spec)
    a = rng.normal(size=mf.K)
    R = ricci_scalar_fd(mf, a)
    E = einstein_fd(mf, a)
    assert abs(np.trace(E) - (1 - mf.K / 2) * R) <= 1e-8 * abs(R) + 1e-14
    np.testing.assert_allclose(np.trace(ricci_tensor_fd(mf, a)), R, rtol=1e-12, atol=1e-14)


def test_ricci_constant_across_probes(rng):
    mf = _field("1,x,x^2")
    vals = [ricci_scalar_fd(mf, rng.normal(size=3), 1e-3) for _ in range(10)]
    assert max(vals) - min(vals) <= 1e-4 * (abs(np.mean(vals)) + 1e-6)


def test_einstein_closed_asymmetry_reported():
    E = einstein_tensor_closed(*MOMENTS["1,x,x^2"], 0.01)
    assert E.asymmetry_norm == pytest.approx(np.linalg.norm(E.raw - E.raw.T))
    np.testing.assert_array_equal(E.symmetrized, E.symmetrized.T)


def test_report_fields():
    rep = curvature_report(_field("1,x"), [0.1, 0.2], 1e-3)
    d = rep.to_dict()
    assert d["fd_step"] == 1e-3 and d["K"] == 2
    assert d["agreement"]["fd_minus_exact"] == pytest.approx(0.0, abs=1e-6)
