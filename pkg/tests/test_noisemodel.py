import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from phaseqrng.errors import (
    DegenerateFitError,
    InconsistentMeasurementError,
    InfiniteRatioError,
    UnboundedOptimumError,
)
from phaseqrng.noisemodel import (
    NoiseModelParams,
    VariancePoint,
    fit_variance_model,
    gamma_from_fit,
    gamma_from_measurement,
    optimal_power,
    optimal_power_search,
    read_points,
    simulate_classical_reference,
    write_points,
)
from phaseqrng.physsim import REFERENCE_PARAMS, SimConfig

TRUE = NoiseModelParams(6.2068, 0.3958, 0.2162)
POWERS = np.linspace(0.1, 10, 12)


def points_from(params, powers):
    return [VariancePoint(float(p), float(v)) for p, v in zip(powers, params.predict(powers))]


def test_noiseless_exact_recovery():
    fit = fit_variance_model(points_from(TRUE, POWERS))
    for got, want in zip((fit.aq, fit.ac, fit.f), (TRUE.aq, TRUE.ac, TRUE.f)):
        assert got == pytest.approx(want, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0)


def test_constant_variance():
    fit = fit_variance_model([VariancePoint(p, 0.5) for p in (0.5, 1, 2, 4, 8)])
    assert (fit.aq, fit.ac) == pytest.approx((0, 0), abs=1e-12)
    assert fit.f == pytest.approx(0.5)


def test_nonnegativity_enforced():
    # a concave point cloud would want AC < 0
    pts = [VariancePoint(p, 2 * p - 0.1 * p * p + 0.3) for p in np.linspace(0.1, 5, 10)]
    fit = fit_variance_model(pts)
    assert min(fit.aq, fit.ac, fit.f) >= 0
    assert 0 <= fit.r_squared <= 1


def test_degenerate_fit():
    with pytest.raises(DegenerateFitError):
        fit_variance_model([VariancePoint(1, 1), VariancePoint(1, 1.1), VariancePoint(2, 2), VariancePoint(2, 2)])
    with pytest.raises(DegenerateFitError):
        fit_variance_model(points_from(TRUE, [1, 2, 3]))


def test_fit_idempotent():
    pts = [VariancePoint(p, v) for p, v in zip(POWERS, TRUE.predict(POWERS) * (1 + 0.01 * np.sin(POWERS)))]
    a = fit_variance_model(pts)
    b = fit_variance_model(points_from(a, POWERS))
    assert (b.aq, b.ac, b.f) == pytest.approx((a.aq, a.ac, a.f), rel=1e-9)


@given(st.floats(0.01, 100))
def test_scale_equivariance(c):
    pts = [VariancePoint(p, v) for p, v in zip(POWERS, TRUE.predict(POWERS) * (1 + 0.02 * np.cos(3 * POWERS)))]
    a = fit_variance_model(pts)
    b = fit_variance_model([VariancePoint(p.power_mw, c * p.variance_mv2) for p in pts])
    assert (b.aq, b.ac, b.f) == pytest.approx((c * a.aq, c * a.ac, c * a.f), rel=1e-8)
    assert optimal_power(b)[0] == pytest.approx(optimal_power(a)[0], rel=1e-8)
    assert gamma_from_fit(b, 0.9) == pytest.approx(gamma_from_fit(a, 0.9), rel=1e-8)


def test_gamma_from_fit_examples():
    assert gamma_from_fit(TRUE, 0.9) == pytest.approx(5.58612 / 0.536798, rel=1e-5)
    assert gamma_from_fit(NoiseModelParams(0, 1, 1), 2.0) == 0
    assert gamma_from_fit(TRUE, 1e-9) < 1e-6
    with pytest.raises(InfiniteRatioError):
        gamma_from_fit(NoiseModelParams(1, 0, 0), 1.0)


def test_gamma_from_measurement_examples():
    assert gamma_from_measurement(5.24, 5.24 / 6.46) == pytest.approx(5.46)
    assert gamma_from_measurement(3.0, 3.0) == 0
    assert gamma_from_measurement(4.0, 2.0) == 1
    with pytest.raises(InconsistentMeasurementError):
        gamma_from_measurement(1.0, 2.0)
    with pytest.raises(InfiniteRatioError):
        gamma_from_measurement(1.0, 0.0)


@given(st.floats(0.01, 100), st.floats(0, 50))
def test_gamma_round_trip(v, g):
    assert gamma_from_measurement(v, v / (g + 1)) == pytest.approx(g, rel=1e-12, abs=1e-12)


def test_optimal_power_examples():
    p, g = optimal_power(TRUE)
    assert p == pytest.approx(0.7391, abs=1e-4)
    assert g == pytest.approx(10.61, abs=0.01)
    assert optimal_power(NoiseModelParams(2, 1, 1)) == pytest.approx((1.0, 1.0))
    p1, g1 = optimal_power(NoiseModelParams(*REFERENCE_PARAMS[1][:3]))
    assert (p1, g1) == (pytest.approx(0.6388, abs=1e-4), pytest.approx(11.20, abs=0.01))
    with pytest.raises(UnboundedOptimumError):
        optimal_power(NoiseModelParams(1, 0, 1))
    with pytest.raises(UnboundedOptimumError):
        optimal_power(NoiseModelParams(1, 1, 0))


@given(st.floats(0.1, 20), st.floats(0.05, 2), st.floats(0.02, 2))
def test_gamma_unimodal(aq, ac, f):
    params = NoiseModelParams(aq, ac, f)
    p_star, _ = optimal_power(params)
    below = np.linspace(p_star * 0.01, p_star * 0.99, 50)
    above = np.linspace(p_star * 1.01, p_star * 20, 50)
    gb = [gamma_from_fit(params, p) for p in below]
    ga = [gamma_from_fit(params, p) for p in above]
    assert np.all(np.diff(gb) > 0) and np.all(np.diff(ga) < 0)


@given(st.floats(0.5, 20), st.floats(0.05, 2), st.floats(0.02, 2))
def test_search_matches_closed_form(aq, ac, f):
    params = NoiseModelParams(aq, ac, f)
    p, g = optimal_power(params)
    assume(p < 11.9)
    ps, gs = optimal_power_search(params)
    assert ps == pytest.approx(p, rel=1e-6)
    assert gs == pytest.approx(g, rel=1e-9)


def test_points_file_round_trip(tmp_path):
    pts = [VariancePoint(0.1 * i + 0.1, 1.0 / 3 + i, 1000) for i in range(5)]
    write_points(pts, tmp_path / "p.csv")
    assert read_points(tmp_path / "p.csv") == pts


def test_classical_reference_upper_bounds_classical_variance():
    cfg = SimConfig.from_reference(10, 0.9, rng_seed=12)
    classical = TRUE.ac * 0.81 + TRUE.f
    ref = simulate_classical_reference(cfg, 12.0, 1 << 20)
    quantum_residual = TRUE.aq * 0.81 / 12.0
    assert ref == pytest.approx(classical + quantum_residual, rel=0.05)
    assert ref > classical * 0.95
