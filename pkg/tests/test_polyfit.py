import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softprbm.core import Condition, SampleGrid, SampleRecord
from softprbm.oracle import GroundTruthLaw, SampleSet, generate_samples
from softprbm.polyfit import (
    FitConfig,
    InsufficientData,
    KindMismatch,
    PolySurrogate,
    extract_stiffness,
    fit_poly_surrogate,
    fit_quality,
    lstsq_qr,
    IllConditioned,
)
from support import BELLOW_GRID, DESIGN

LAW = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5))


@pytest.fixture(scope="module")
def bellow_samples():
    return generate_samples(LAW, BELLOW_GRID, DESIGN)


def test_round_trip_recovers_coefficients(bellow_samples):
    sur = fit_poly_surrogate(bellow_samples)
    np.testing.assert_allclose(sur.coefficients(), (2, 1, 3, 0, 5), atol=1e-6)
    q = fit_quality(sur, bellow_samples)
    assert q.max_normalized <= 1e-6
    assert sur.operating_range["p"] == [0.0, 15.0]


def test_deformation_intercept_convention(bellow_samples):
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0.5, 5))
    s = generate_samples(law, BELLOW_GRID, DESIGN)
    a = fit_poly_surrogate(s)
    b = fit_poly_surrogate(s, FitConfig(intercept_to="deformation"))
    # the shared constant moves between k_a and k_e; the law itself is unchanged
    assert a.b_a == pytest.approx(1.5, abs=1e-6) and a.b_e == 0.0
    assert b.b_a == 0.0 and b.b_e == pytest.approx(1.5, abs=1e-6)
    p, u = np.meshgrid(np.linspace(0, 15, 7), np.linspace(-0.5, 2.0, 9))
    np.testing.assert_allclose(a.eval(p, u), b.eval(p, u), atol=1e-9)


def test_hand_evaluation():
    s = PolySurrogate.from_coefficients(1, 0, 0, 0, 2)
    assert float(s.eval(10, 0.5)) == pytest.approx(15.0)
    assert float(s.eval(0, 0)) == 0.0
    z = PolySurrogate.from_coefficients(0, 0, 0, 0, 0)
    assert float(z.eval(3.0, 1.2)) == 0.0


@settings(max_examples=40, deadline=None)
@given(
    st.tuples(*[st.floats(-5, 5) for _ in range(5)]),
    st.floats(0, 15),
    st.floats(-2, 2),
)
def test_zero_deflection_effort_is_free_term(coeffs, p, u):
    s = PolySurrogate.from_coefficients(*coeffs)
    assert float(s.eval(p, 0.0)) == pytest.approx(coeffs[4] * p, abs=1e-12)
    # linear in p at fixed u for degree-1 k_a and k_free
    mid = float(s.eval(p / 2, u)) - float(s.eval(0, u))
    full = float(s.eval(p, u)) - float(s.eval(0, u))
    assert full == pytest.approx(2 * mid, abs=1e-9)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(3)
    s = PolySurrogate((0.7, -0.2, 0.03), (0.0, 1.1, -0.4), (0.0, 0.5, 0.02))
    p = rng.uniform(0, 15, 1000)
    u = rng.uniform(-1, 1, 1000)
    h = 1e-6
    fd_u = (s.eval(p, u + h) - s.eval(p, u - h)) / (2 * h)
    fd_p = (s.eval(p + h, u) - s.eval(p - h, u)) / (2 * h)
    np.testing.assert_allclose(s.d_du(p, u), fd_u, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(s.d_dp(p, u), fd_p, rtol=1e-6, atol=1e-8)


def test_potential_is_stored_energy():
    # effort is minus the derivative of the stored energy
    s = PolySurrogate((0.7, -0.2), (0.0, 1.1, -0.4), (0.0, 0.5))
    u = np.linspace(-1, 1, 11)
    h = 1e-6
    fd = (s.potential(3.0, u + h) - s.potential(3.0, u - h)) / (2 * h)
    np.testing.assert_allclose(-fd, s.eval(3.0, u), atol=1e-7)


def test_null_actuator_gives_zero_polynomials():
    recs = [SampleRecord(p, 0.0, 0.0, 0.0, Condition.FREE) for p in (0.0, 1.0, 2.0, 3.0)]
    recs += [SampleRecord(p, 0.0, 0.0, 0.0, Condition.CONSTRAINED) for p in (1.0, 2.0, 3.0) for _ in range(3)]
    s = fit_poly_surrogate(SampleSet(DESIGN, "pressure", "y", recs))
    assert s.coefficients() == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_too_few_constrained_points():
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5))
    s = generate_samples(law, SampleGrid(0, 3, 1, 0.0, 0.01, 0.01), DESIGN)
    with pytest.raises(InsufficientData):
        extract_stiffness(s)


def test_nonseparable_bias_is_reported():
    law = GroundTruthLaw("nonseparable", (0.02, 0.3, 0.05, 0.01, 0.02))
    s = generate_samples(law, SampleGrid(0, 15, 1, 0, 0.02, 0.002), DESIGN)
    sur = fit_poly_surrogate(s)
    assert sur.fit_report["training"]["max_normalized"] > 1e-6


def test_holdout_single_record_error_is_pointwise(bellow_samples):
    sur = PolySurrogate.from_coefficients(2.0, 1.0, 3.0, 0.0, 5.1)
    rec = bellow_samples.constrained()[100]
    hold = SampleSet(DESIGN, "pressure", "y", [SampleRecord(rec.p, 0.0, 0.0, 0.0, "free"), rec])
    q = fit_quality(sur, hold)
    errs = [abs(float(sur.eval(r.p, r.u)) - r.tau) for r in hold.records]
    assert q.max_abs == pytest.approx(max(errs))


def test_kind_mismatch(bellow_samples):
    sur = PolySurrogate.from_coefficients(2, 1, 3, 0, 5, kind="tendon")
    with pytest.raises(KindMismatch):
        fit_quality(sur, bellow_samples)


def test_ill_conditioned_system():
    A = np.column_stack([np.ones(5), np.ones(5) + 1e-14 * np.arange(5)])
    with pytest.raises(IllConditioned):
        lstsq_qr(A, np.arange(5.0))


def test_serialization_round_trip(tmp_path, bellow_samples):
    sur = fit_poly_surrogate(bellow_samples, FitConfig(ke_degree=2))
    back = PolySurrogate.load(sur.save(tmp_path / "s.json"))
    assert back.coefficients() == sur.coefficients()
    assert back.k_e == sur.k_e and back.operating_range == sur.operating_range
