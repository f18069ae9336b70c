import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression, PoissonRegressor

from effectgate.glm import LL_ROUNDOFF, add_intercept, fit_glm, loglik, sandwich_cov


def _design(n, seed):
    rng = np.random.default_rng(seed)
    return rng, add_intercept(rng.normal(size=(n, 2)))


def test_logistic_matches_sklearn():
    rng, X = _design(3000, 0)
    y = (rng.random(3000) < 1 / (1 + np.exp(-(X @ [0.3, 1.0, -0.7])))).astype(float)
    fit = fit_glm(X, y, "binomial", ridge=0.0)
    ref = LogisticRegression(penalty=None, tol=1e-12, max_iter=10_000).fit(X[:, 1:], y)
    assert fit.converged
    np.testing.assert_allclose(fit.coef, np.r_[ref.intercept_, ref.coef_.ravel()], atol=1e-5)


def test_poisson_matches_sklearn():
    rng, X = _design(3000, 1)
    y = rng.poisson(np.exp(X @ [0.5, 0.4, -0.2])).astype(float)
    fit = fit_glm(X, y, "poisson", ridge=0.0)
    ref = PoissonRegressor(alpha=0.0, tol=1e-12, max_iter=10_000).fit(X[:, 1:], y)
    np.testing.assert_allclose(fit.coef, np.r_[ref.intercept_, ref.coef_], atol=1e-5)


def test_gaussian_is_least_squares():
    rng, X = _design(500, 2)
    y = X @ [1.0, 2.0, -3.0] + rng.normal(size=500)
    fit = fit_glm(X, y, "gaussian", ridge=0.0)
    np.testing.assert_allclose(fit.coef, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)


@pytest.mark.parametrize("family", ["binomial", "poisson"])
def test_loglik_path_is_non_decreasing(family):
    rng, X = _design(20_000, 3)
    eta = X @ [0.2, 0.8, -0.5]
    y = (rng.random(20_000) < 1 / (1 + np.exp(-eta))).astype(float) if family == "binomial" else rng.poisson(np.exp(eta))
    fit = fit_glm(X, y, family)
    assert fit.converged and fit.grad_norm < 1e-8
    path = np.array(fit.loglik_path)
    slack = LL_ROUNDOFF * (1 + np.abs(path[:-1]))
    assert np.all(np.diff(path) >= -slack)
    assert fit.loglik == pytest.approx(loglik(family, y, X @ fit.coef))


def test_separated_data_drives_coefficients_off():
    x = np.linspace(-1, 1, 200)
    X = add_intercept(x)
    fit = fit_glm(X, (x > 0).astype(float), "binomial", ridge=0.0, max_iter=30)
    assert abs(fit.coef[1]) > 100


def test_sandwich_matches_two_group_closed_form():
    # log-link Poisson on a group indicator: HC0 variance of the log-RR is sum_g (1 - p_g) / (n_g p_g)
    t = np.r_[np.ones(50), np.zeros(50)]
    y = np.r_[np.ones(40), np.zeros(10), np.ones(20), np.zeros(30)]
    X = add_intercept(t)
    fit = fit_glm(X, y, "poisson", ridge=0.0)
    assert np.exp(fit.coef[1]) == pytest.approx(2.0, abs=1e-9)
    cov = sandwich_cov(fit, X, y)
    expected = (1 - 0.8) / (50 * 0.8) + (1 - 0.4) / (50 * 0.4)
    assert cov[1, 1] == pytest.approx(expected, rel=1e-9)


def test_unknown_family():
    with pytest.raises(ValueError):
        fit_glm(np.ones((3, 1)), np.ones(3), "gamma")
