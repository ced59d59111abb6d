import numpy as np
import pytest
from scipy import stats

from samort import glam
from samort.basis import BasisConfig, build_basis_set
from samort.data import augment_with_totals
from samort.errors import NumericalError
from samort.inference import (
    classify_difference,
    classify_significance,
    interval,
    quantile_interval,
    sample_coefficients,
)
from samort.penalty import PenaltyConfig
from samort.simulate import Scenario, generate
from samort.solver import fit, fit_arrays

SMALL = dict(n_age=3, n_time=3, n_lon=3, n_lat=3, n_age_reduced=3, n_time_reduced=3,
             degree=2, shock_years=(), infant=False)


@pytest.fixture(scope="module")
def toy_fit():
    data, _ = generate(Scenario(n_ages=4, n_areas=6, n_years=3, mean_exposure=4000, gompertz_level=-4.0,
                                gompertz_slope=0.2, infant_excess=0.0, spatial_amplitude=0.3, seed=21))
    basis = build_basis_set(data, BasisConfig(**SMALL))
    return fit(augment_with_totals(data), basis, PenaltyConfig(kappa=2.0))


def test_zero_noise_returns_estimate(toy_fit):
    p = toy_fit.theta.size
    draws = sample_coefficients(toy_fit, B=1, z=np.zeros((1, p)))
    np.testing.assert_array_equal(draws.draws[0], toy_fit.theta)


def test_same_seed_same_draws(toy_fit):
    a = sample_coefficients(toy_fit, B=50, seed=9)
    b = sample_coefficients(toy_fit, B=50, seed=9)
    c = sample_coefficients(toy_fit, B=50, seed=10)
    assert a.draws.tobytes() == b.draws.tobytes()
    assert not np.array_equal(a.draws, c.draws)


def test_missing_factor_rejected(toy_fit):
    class Bare:
        theta = toy_fit.theta
        factor = None

    with pytest.raises(NumericalError):
        sample_coefficients(Bare(), B=2)


def test_draw_covariance_matches_inverse(toy_fit):
    draws = sample_coefficients(toy_fit, B=5000, seed=1)
    V = toy_fit.covariance
    S = np.cov(draws.draws, rowvar=False)
    np.testing.assert_allclose(np.diag(S), np.diag(V), rtol=0.10)
    se = np.sqrt(np.diag(V) / draws.B)
    assert np.all(np.abs(draws.draws.mean(axis=0) - toy_fit.theta) < 3 * se)


def test_constant_summary(toy_fit):
    draws = sample_coefficients(toy_fit, B=100, seed=2)
    assert interval(lambda th: 4.25, draws) == (4.25, 4.25, 4.25)


def test_linear_summary_normal_theory(toy_fit):
    rng = np.random.default_rng(3)
    a = rng.normal(size=toy_fit.theta.size)
    draws = sample_coefficients(toy_fit, B=5000, seed=4)
    lo, hi, point = interval(lambda th: a @ th, draws, 0.95)
    half = stats.norm.ppf(0.975) * np.sqrt(a @ toy_fit.covariance @ a)
    assert point == pytest.approx(a @ toy_fit.theta)
    assert abs(lo - (point - half)) < 0.1 * half
    assert abs(hi - (point + half)) < 0.1 * half


def test_vector_summary_shape(toy_fit):
    draws = sample_coefficients(toy_fit, B=200, seed=5)
    lo, hi, point = interval(lambda th: th[:3], draws)
    assert lo.shape == hi.shape == point.shape == (3,)
    assert np.all(lo <= point) and np.all(point <= hi)


def test_quantile_convention():
    # linear interpolation between order statistics: position (B - 1) * p from zero
    values = np.arange(1.0, 1001.0)
    rng = np.random.default_rng(0)
    lo, hi = quantile_interval(rng.permutation(values), 0.95)
    assert lo == pytest.approx(25.975, abs=1e-12)
    assert hi == pytest.approx(975.025, abs=1e-12)
    # bracketed by the 25th/26th and 975th/976th order statistics
    assert values[24] <= lo <= values[25]
    assert values[974] <= hi <= values[975]
    with pytest.raises(ValueError):
        quantile_interval(values, 1.0)


def test_non_finite_exclusion():
    values = np.arange(1000.0)
    values[:5] = np.nan
    with pytest.warns(RuntimeWarning, match="excluded 5"):
        lo, _ = quantile_interval(values, 0.9)
    assert np.isfinite(lo)
    values[:20] = np.inf
    with pytest.raises(NumericalError):
        quantile_interval(values, 0.9)


def test_classify_examples():
    ref = (83.0, 84.0)
    labels = classify_significance([(80, 82), (83.5, 85), (84.1, 86)], ref)
    assert list(labels) == ["below", "overlap", "above"]


def test_classify_antisymmetric():
    rng = np.random.default_rng(6)
    for _ in range(200):
        a = np.sort(rng.uniform(0, 10, 2))
        b = np.sort(rng.uniform(0, 10, 2))
        fwd = classify_significance([a], b)[0]
        back = classify_significance([b], a)[0]
        assert {"below": "above", "above": "below", "overlap": "overlap"}[fwd] == back


def test_classify_difference():
    assert list(classify_difference([-2, -1, 0.5], [-0.5, 1, 2])) == ["below", "overlap", "above"]


def test_linear_summary_coverage():
    # nearly unpenalized toy regression with known coefficients
    rng = np.random.default_rng(7)
    design = glam.BlockDesign(rng.uniform(size=(6, 3)), rng.uniform(size=(5, 2)))
    truth = np.array([-3.0, -2.0, -2.5, 0.4, 0.2, 0.1])
    exposure = np.full(design.obs_shape, 400.0)
    mean = np.exp(glam.predictor_array(design, truth)) * exposure
    a = np.array([0.5, 0.0, -1.0, 1.0, 0.0, 0.3])
    P = 1e-8 * np.eye(truth.size)
    hits = 0
    reps = 500
    for r in range(reps):
        y = rng.poisson(mean).astype(float)
        res = fit_arrays(design, y, exposure, P)
        lo, hi, _ = interval(lambda th: a @ th, sample_coefficients(res, B=1000, seed=r))
        hits += lo <= a @ truth <= hi
    assert abs(hits / reps - 0.95) <= 0.03
