import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from synsamp.priors import (RBM_BIMODAL_PRIOR, WTA_PRIOR, PriorSpec, log_prior_density,
                            log_prior_grad, responsibilities, sample_prior)

finite = st.floats(-6.0, 6.0, allow_nan=False)

SPECS = [
    PriorSpec.gaussian(0.5, 1.0),
    PriorSpec.gaussian(-1.0, 0.3),
    RBM_BIMODAL_PRIOR,
    PriorSpec.mixture(0.2, -1.0, 0.5, 2.0, 0.7),
]


def _central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("spec", SPECS)
@given(theta=finite)
@settings(max_examples=60, deadline=None)
def test_gradient_matches_finite_difference(spec, theta):
    num = _central_diff(lambda t: float(log_prior_density(t, spec)), theta)
    ana = float(log_prior_grad(theta, spec))
    assert ana == pytest.approx(num, rel=1e-4, abs=1e-6)


def test_gaussian_density_matches_scipy():
    x = np.linspace(-3, 4, 15)
    np.testing.assert_allclose(log_prior_density(x, WTA_PRIOR), stats.norm(0.5, 1.0).logpdf(x))


def test_mixture_density_matches_scipy():
    x = np.linspace(-1, 2, 31)
    ref = np.log(0.5 * stats.norm(1.0, 0.15).pdf(x) + 0.5 * stats.norm(0.0, 0.15).pdf(x))
    np.testing.assert_allclose(log_prior_density(x, RBM_BIMODAL_PRIOR), ref, rtol=1e-12)


def test_bimodal_gradient_points_to_nearest_mode():
    # just above each mode the drift pulls back down, just below it pushes up
    for mode in (0.0, 1.0):
        assert log_prior_grad(mode + 0.05, RBM_BIMODAL_PRIOR) < 0
        assert log_prior_grad(mode - 0.05, RBM_BIMODAL_PRIOR) > 0


@given(theta=st.floats(-50, 50, allow_nan=False))
def test_responsibilities_are_a_distribution(theta):
    r = responsibilities(theta, RBM_BIMODAL_PRIOR)
    assert np.all(r >= 0)
    assert r.sum() == pytest.approx(1.0)


def test_responsibilities_far_from_modes_do_not_overflow():
    r = responsibilities(np.array([-1e3, 1e3]), RBM_BIMODAL_PRIOR)
    assert np.all(np.isfinite(r))
    np.testing.assert_allclose(r[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(r[:, 1], [1.0, 0.0])


def test_uniform_prior_is_flat():
    u = PriorSpec.uniform()
    np.testing.assert_array_equal(log_prior_grad(np.linspace(-5, 5, 7), u), 0.0)
    assert log_prior_density(3.0, PriorSpec.uniform(0.0, 4.0)) == pytest.approx(-np.log(4.0))


def test_samples_have_prior_moments():
    rng = np.random.default_rng(0)
    x = sample_prior(RBM_BIMODAL_PRIOR, rng, 200_000)
    assert x.mean() == pytest.approx(0.5, abs=0.01)
    # mixture variance = within-component + between-component spread
    assert x.var() == pytest.approx(0.15 ** 2 + 0.25, rel=0.02)


def test_unbounded_uniform_cannot_be_sampled():
    with pytest.raises(ValueError):
        sample_prior(PriorSpec.uniform(), np.random.default_rng(0), 3)


@pytest.mark.parametrize("kwargs", [
    dict(kind="gaussian", sigma=0.0),
    dict(kind="gaussian_mixture2", weight1=1.0),
    dict(kind="gaussian_mixture2", sigma2=-1.0),
    dict(kind="uniform", lo=1.0, hi=0.0),
    dict(kind="cauchy"),
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ValueError):
        PriorSpec(**kwargs)


@pytest.mark.parametrize("spec", SPECS + [PriorSpec.uniform(-1.0, 1.0)])
def test_dict_round_trip(spec):
    assert PriorSpec.from_dict(spec.to_dict()) == spec
