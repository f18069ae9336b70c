"""Iteratively reweighted least squares for logistic, Poisson and Gaussian GLMs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

FAMILIES = ("binomial", "poisson", "gaussian")
LL_ROUNDOFF = 1e-13


@dataclass
class GLMFit:
    family: str
    coef: np.ndarray
    converged: bool
    n_iter: int
    loglik: float
    loglik_path: list = field(default_factory=list)
    grad_norm: float = 0.0

    def linear_predictor(self, X):
        return X @ self.coef

    def predict(self, X):
        return mean_function(self.family, self.linear_predictor(X))


def mean_function(family, eta):
    if family == "binomial":
        return expit(eta)
    if family == "poisson":
        return np.exp(np.clip(eta, -700, 700))
    return eta


def loglik(family, y, eta):
    if family == "binomial":
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if family == "poisson":
        mu = np.exp(np.clip(eta, -700, 700))
        return float(np.sum(y * eta - mu - gammaln(y + 1.0)))
    resid = y - eta
    return float(-0.5 * resid @ resid)


def _working_weights(family, mu):
    if family == "binomial":
        return mu * (1.0 - mu)
    if family == "poisson":
        return mu
    return np.ones_like(mu)


def fit_glm(X, y, family="binomial", ridge=1e-6, max_iter=100, tol=1e-8, init=None) -> GLMFit:
    """Newton/IRLS with a ridge on the Hessian diagonal and step halving.

    ``X`` must already contain an intercept column if one is wanted.
    The Gaussian family is solved directly by least squares and ignores
    ``ridge``.
    Convergence means the score vector's max-norm fell below ``tol``.
    Step halving keeps the log-likelihood non-decreasing up to roundoff:
    near the optimum a Newton step gains less than the precision of the
    summed log-likelihood, so a step within ``LL_ROUNDOFF * (1 + |ll|)`` of
    the current value is accepted.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    p = X.shape[1]
    if family == "gaussian":
        # unpenalized, like the IRLS fixed point below; lstsq copes with rank deficiency
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        grad = X.T @ (y - X @ coef)
        ll = loglik(family, y, X @ coef)
        return GLMFit(family, coef, True, 1, ll, [ll], float(np.max(np.abs(grad), initial=0.0)))

    if init is not None:
        coef = np.asarray(init, float).copy()
    else:
        coef = np.zeros(p)
        if family == "poisson" and p:
            # start from the intercept-only solution when column 0 is constant
            if np.all(X[:, 0] == 1.0):
                coef[0] = np.log(max(y.mean(), 1e-8))
    eta = X @ coef
    ll = loglik(family, y, eta)
    path = [ll]
    converged = False
    n_iter = 0
    while True:
        mu = mean_function(family, eta)
        grad = X.T @ (y - mu)
        grad_norm = float(np.max(np.abs(grad), initial=0.0))
        if grad_norm < tol:
            converged = True
            break
        if n_iter >= max_iter:
            break
        w = _working_weights(family, mu)
        hess = (X * w[:, None]).T @ X
        hess[np.diag_indices(p)] += ridge
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        accepted = False
        slack = LL_ROUNDOFF * (1.0 + abs(ll))
        for _ in range(40):
            cand = coef + scale * step
            cand_eta = X @ cand
            cand_ll = loglik(family, y, cand_eta)
            if cand_ll >= ll - slack:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        n_iter += 1
        coef, eta, ll = cand, cand_eta, cand_ll
        path.append(ll)
    return GLMFit(family, coef, converged, n_iter, ll, path, grad_norm)


def sandwich_cov(fit: GLMFit, X, y, ridge=0.0) -> np.ndarray:
    """HC0 robust covariance ``A^-1 B A^-1`` of the coefficients."""
    X = np.asarray(X, float)
    mu = fit.predict(X)
    w = _working_weights(fit.family, mu)
    bread = (X * w[:, None]).T @ X
    if ridge:
        bread[np.diag_indices_from(bread)] += ridge
    resid = np.asarray(y, float) - mu
    meat = (X * (resid**2)[:, None]).T @ X
    inv = np.linalg.pinv(bread)
    return inv @ meat @ inv


def add_intercept(X) -> np.ndarray:
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])
