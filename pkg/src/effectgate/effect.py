"""Effect estimation on the probability scale, risk ratios, E-values and bootstrap CIs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import Dataset
from .exceptions import DomainError, PositivityError, UnstableIntervalWarning
from .glm import add_intercept, fit_glm, sandwich_cov
from .overlap import E_BOUND, PropensityModel, _check_binary, fit_propensity

ESTIMATORS = ("reg", "ipw", "dr")
Z95 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class EffectEstimate:
    estimator: str
    scale: str = "risk_difference"
    point: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    n_used: int = 0
    defined: bool = True
    se: float | None = None
    ci_method: str | None = None
    detail: str = ""

    def __post_init__(self):
        if self.defined:
            if self.point is None or not math.isfinite(self.point):
                raise ValueError("a defined estimate needs a finite point value")
            if self.ci_low is not None and not (self.ci_low <= self.point <= self.ci_high):
                raise ValueError("confidence interval must contain the point estimate")
        elif self.point is not None or self.ci_low is not None:
            raise ValueError("an undefined estimate carries no point or interval")

    @classmethod
    def undefined(cls, estimator, detail="", n_used=0, scale="risk_difference"):
        return cls(estimator, scale, None, None, None, n_used, False, detail=detail)

    def with_ci(self, lo, hi, method):
        lo, hi = min(lo, self.point), max(hi, self.point)
        return EffectEstimate(
            self.estimator, self.scale, self.point, float(lo), float(hi), self.n_used, True, self.se, method, self.detail
        )

    @property
    def ci_excludes_zero(self):
        return self.defined and self.ci_low is not None and (self.ci_low > 0 or self.ci_high < 0)

    def to_dict(self):
        return {
            "estimator": self.estimator,
            "scale": self.scale,
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "ci_method": self.ci_method,
            "se": self.se,
            "n_used": self.n_used,
            "defined": self.defined,
            "detail": self.detail,
        }


def _outcome_family(y):
    y = np.asarray(y, float)
    return "binomial" if np.all((y == 0) | (y == 1)) else "gaussian"


@dataclass
class OutcomeModel:
    """Fitted ``y ~ t + X`` with counterfactual predictions m1, m0 for every row."""

    family: str
    coef: np.ndarray
    converged: bool
    m1: np.ndarray
    m0: np.ndarray
    design: np.ndarray = field(repr=False)


def fit_outcome(X, t, y, family=None) -> OutcomeModel:
    X = np.asarray(X, float).reshape(len(t), -1)
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    family = family or _outcome_family(y)
    design = np.column_stack([np.ones(len(t)), t, X])
    if len(y) and np.ptp(y) == 0:
        # constant outcome: the fitted mean is that constant, which a logistic MLE only reaches at infinity
        const = np.full(len(y), y[0])
        return OutcomeModel(family, np.zeros(design.shape[1]), True, const, const.copy(), design)
    fit = fit_glm(design, y, family)
    d1 = design.copy()
    d1[:, 1] = 1.0
    d0 = design.copy()
    d0[:, 1] = 0.0
    return OutcomeModel(family, fit.coef, fit.converged, fit.predict(d1), fit.predict(d0), design)


def reg_effect(X, t, y, family=None):
    """G-computation ``mean(m1 - m0)`` with its influence-function values."""
    om = fit_outcome(X, t, y, family)
    y = np.asarray(y, float)
    tau = float(np.mean(om.m1 - om.m0))
    n = len(y)
    # IF = (m1 - m0 - tau) + g' A^-1 x_i (y_i - mu_i), g = d tau / d beta
    mu = np.where(np.asarray(t) == 1, om.m1, om.m0)
    d1 = om.design.copy()
    d1[:, 1] = 1.0
    d0 = om.design.copy()
    d0[:, 1] = 0.0
    if om.family == "binomial":
        g = (d1 * (om.m1 * (1 - om.m1))[:, None] - d0 * (om.m0 * (1 - om.m0))[:, None]).mean(axis=0)
        w = mu * (1 - mu)
    else:
        g = (d1 - d0).mean(axis=0)
        w = np.ones(n)
    bread = (om.design * w[:, None]).T @ om.design / n
    correction = (om.design @ np.linalg.pinv(bread) @ g) * (y - mu)
    infl = om.m1 - om.m0 - tau + correction
    return tau, infl, om


def ipw_effect(t, y, e):
    """Hájek IPW difference and its influence values (propensity treated as known)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    e = np.asarray(e, float)
    if np.any((e <= E_BOUND) | (e >= 1 - E_BOUND)):
        raise PositivityError(f"propensity scores outside ({E_BOUND}, {1 - E_BOUND})")
    w1 = t / e
    w0 = (1 - t) / (1 - e)
    mu1 = np.sum(w1 * y) / np.sum(w1)
    mu0 = np.sum(w0 * y) / np.sum(w0)
    infl = w1 * (y - mu1) / w1.mean() - w0 * (y - mu0) / w0.mean()
    return float(mu1 - mu0), infl


def aipw_effect(t, y, m1, m0, e):
    """Augmented IPW mean of the efficient-score terms."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    e = np.asarray(e, float)
    if np.any((e <= E_BOUND) | (e >= 1 - E_BOUND)):
        raise PositivityError(f"propensity scores outside ({E_BOUND}, {1 - E_BOUND})")
    psi = m1 - m0 + t * (y - m1) / e - (1 - t) * (y - m0) / (1 - e)
    tau = float(psi.mean())
    return tau, psi - tau


def _wald(name, tau, infl, n, detail=""):
    se = float(np.std(infl, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    tau = float(tau)
    return EffectEstimate(
        name, "risk_difference", tau, float(tau - Z95 * se), float(tau + Z95 * se), n, True, se, "asymptotic", detail
    )


def _names(d, t, y):
    return t or d.treatment, y or d.outcome


def estimate_reg(d: Dataset, t=None, y=None, w=()) -> EffectEstimate:
    """Regression adjustment: outcome model ``y ~ t + w`` averaged over units."""
    t, y = _names(d, t, y)
    w = list(w)
    tau, infl, om = reg_effect(d.matrix(w), d.column(t), d.column(y))
    if not om.converged:
        return EffectEstimate.undefined("reg", "outcome model did not converge", d.n)
    return _wald("reg", tau, infl, d.n)


def estimate_ipw(d: Dataset, t=None, y=None, m: PropensityModel | None = None) -> EffectEstimate:
    t, y = _names(d, t, y)
    if m is None:
        raise ValueError("estimate_ipw needs a fitted propensity model")
    tau, infl = ipw_effect(d.column(t), d.column(y), m.scores(d))
    return _wald("ipw", tau, infl, d.n)


def estimate_dr(d: Dataset, t=None, y=None, w=(), m: PropensityModel | None = None) -> EffectEstimate:
    """AIPW with outcome model on ``w`` and propensity from ``m``.

    Pass ``w`` and ``m`` with different covariates to study misspecification.
    """
    t, y = _names(d, t, y)
    if m is None:
        raise ValueError("estimate_dr needs a fitted propensity model")
    om = fit_outcome(d.matrix(list(w)), d.column(t), d.column(y))
    if not om.converged:
        return EffectEstimate.undefined("dr", "outcome model did not converge", d.n)
    tau, infl = aipw_effect(d.column(t), d.column(y), om.m1, om.m0, m.scores(d))
    return _wald("dr", tau, infl, d.n)


def estimate(d: Dataset, estimator: str, w=(), t=None, y=None, m=None) -> EffectEstimate:
    """Dispatch to one estimator, fitting the propensity on ``w`` when needed."""
    t, y = _names(d, t, y)
    if estimator == "reg":
        return estimate_reg(d, t, y, w)
    if m is None:
        m = _quiet_propensity(d, w, t)
    if estimator == "ipw":
        return estimate_ipw(d, t, y, m)
    if estimator == "dr":
        return estimate_dr(d, t, y, w, m)
    raise ValueError(f"unknown estimator {estimator!r}")


def _quiet_propensity(d, w, t):
    return fit_propensity(d, w, t)


def point_estimate(d: Dataset, estimator: str, w=(), t=None, y=None) -> float:
    """Point value only; raises on undefined estimates (for bootstrap and refutation closures)."""
    est = estimate(d, estimator, w, t, y)
    if not est.defined:
        raise ValueError(est.detail or "undefined estimate")
    return est.point


@dataclass(frozen=True)
class RiskRatio:
    rr: float | None
    ci_low: float | None
    ci_high: float | None
    converged: bool
    n_used: int

    @property
    def defined(self):
        return self.rr is not None


def estimate_rr(d: Dataset, t=None, y=None, w=()) -> RiskRatio:
    """Log-link Poisson ``y ~ t + w``; RR = exp(coef_t) with HC0 Wald 95% CI."""
    t, y = _names(d, t, y)
    yv = d.column(y)
    if not np.all((yv == 0) | (yv == 1)):
        raise DomainError("estimate_rr needs a binary outcome")
    X = np.column_stack([np.ones(d.n), d.column(t), d.matrix(list(w))])
    fit = fit_glm(X, yv, "poisson")
    if not fit.converged:
        return RiskRatio(None, None, None, False, d.n)
    cov = sandwich_cov(fit, X, yv)
    b, se = fit.coef[1], math.sqrt(max(cov[1, 1], 0.0))
    return RiskRatio(math.exp(b), math.exp(b - Z95 * se), math.exp(b + Z95 * se), True, d.n)


def evalue_point(rr: float) -> float:
    """E-value for a risk ratio: ``r + sqrt(r (r - 1))`` with ``r = max(rr, 1/rr)``."""
    if not rr > 0:
        raise DomainError("risk ratio must be positive")
    r = rr if rr >= 1 else 1.0 / rr
    return r + math.sqrt(r * (r - 1.0))


@dataclass(frozen=True)
class SensitivityResult:
    rr: float
    rr_ci: tuple | None
    evalue_point: float
    evalue_ci: float | None

    def to_dict(self):
        return {
            "rr": self.rr,
            "rr_ci": None if self.rr_ci is None else list(self.rr_ci),
            "evalue_point": self.evalue_point,
            "evalue_ci": self.evalue_ci,
        }


def evalue(rr: float, ci_bound: float | None = None, ci: tuple | None = None) -> SensitivityResult:
    """E-values for a point RR and for the CI limit closest to the null.

    Give either the limit itself (``ci_bound``) or the whole interval (``ci``).
    The interval E-value is 1 when the interval reaches the null.
    """
    e_point = evalue_point(rr)
    if ci is not None:
        lo, hi = ci
        ci_bound = lo if rr >= 1 else hi
    e_ci = None
    if ci_bound is not None:
        if ci_bound <= 0:
            raise DomainError("CI bound must be positive")
        crosses = ci_bound <= 1 if rr >= 1 else ci_bound >= 1
        e_ci = 1.0 if crosses else evalue_point(ci_bound)
    return SensitivityResult(rr, tuple(ci) if ci is not None else None, e_point, e_ci)


def sensitivity(d: Dataset, t=None, y=None, w=()) -> SensitivityResult | None:
    rr = estimate_rr(d, t, y, w)
    if not rr.defined:
        return None
    return evalue(rr.rr, ci=(rr.ci_low, rr.ci_high))


@dataclass(frozen=True)
class BootstrapResult:
    low: float | None
    high: float | None
    n_ok: int
    n_failed: int
    estimates: np.ndarray = field(repr=False, compare=False)

    @property
    def interval(self):
        return (self.low, self.high)

    @property
    def unstable(self):
        total = self.n_ok + self.n_failed
        return total > 0 and self.n_failed / total > 0.2


def bootstrap_ci(estimator, d: Dataset, B: int = 1000, seed: int = 0, level: float = 0.95) -> BootstrapResult:
    """Percentile bootstrap over units.

    ``estimator`` maps a resampled Dataset to a float and must refit every
    nuisance model itself. Replicate ``b`` draws from ``default_rng([seed, b])``
    so results do not depend on evaluation order. Failing replicates are
    dropped and counted.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    values = np.full(B, np.nan)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        idx = rng.integers(0, d.n, d.n)
        try:
            values[b] = float(estimator(d.take(idx)))
        except Exception:  # noqa: BLE001 - any failed refit counts as a dropped replicate
            continue
    ok = values[np.isfinite(values)]
    failed = B - len(ok)
    if failed / B > 0.2:
        warnings.warn(f"{failed} of {B} bootstrap replicates failed", UnstableIntervalWarning, stacklevel=2)
    if not len(ok):
        return BootstrapResult(None, None, 0, failed, ok)
    a = (1 - level) / 2
    lo, hi = np.quantile(ok, [a, 1 - a])
    return BootstrapResult(float(lo), float(hi), len(ok), failed, ok)


class EffectEstimator(BaseEstimator):
    """ATE estimator on arrays: ``fit(X, t, y)`` with ``X`` the adjustment covariates.

    Sets ``ate_``, ``ci_`` and ``estimate_`` (an :class:`EffectEstimate`).
    ``method`` is ``"dr"``, ``"reg"`` or ``"ipw"``; ``ci`` is ``"asymptotic"``
    or ``"bootstrap"``.
    """

    def __init__(self, method="dr", ci="asymptotic", n_bootstrap=1000, random_state=0):
        self.method = method
        self.ci = ci
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    @staticmethod
    def _point(method, X, t, y):
        if method == "reg":
            return reg_effect(X, t, y)[0]
        e = PropensityModel().fit(X, t).predict_proba(X)[:, 1]
        if method == "ipw":
            return ipw_effect(t, y, e)[0]
        om = fit_outcome(X, t, y)
        return aipw_effect(t, y, om.m1, om.m0, e)[0]

    def fit(self, X, t, y):
        if self.method not in ESTIMATORS:
            raise ValueError(f"method must be one of {ESTIMATORS}")
        X = check_array(X, ensure_min_features=0, dtype=float)
        t = _check_binary(t)
        y = np.asarray(y, float).ravel()
        n = len(t)
        if self.method == "reg":
            tau, infl, _ = reg_effect(X, t, y)
        else:
            e = PropensityModel().fit(X, t).predict_proba(X)[:, 1]
            if self.method == "ipw":
                tau, infl = ipw_effect(t, y, e)
            else:
                om = fit_outcome(X, t, y)
                tau, infl = aipw_effect(t, y, om.m1, om.m0, e)
        est = _wald(self.method, tau, infl, n)
        if self.ci == "bootstrap":
            rows = np.column_stack([t, y, X])
            lo, hi = _array_bootstrap(self.method, rows, self.n_bootstrap, self.random_state)
            est = EffectEstimate(self.method, "risk_difference", tau, None, None, n, True, est.se).with_ci(
                lo, hi, "bootstrap"
            )
        elif self.ci != "asymptotic":
            raise ValueError("ci must be 'asymptotic' or 'bootstrap'")
        self.estimate_ = est
        self.ate_ = est.point
        self.ci_ = (est.ci_low, est.ci_high)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "ate_")
        return self.ate_


def _array_bootstrap(method, rows, B, seed):
    vals = []
    n = len(rows)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        r = rows[rng.integers(0, n, n)]
        try:
            vals.append(EffectEstimator._point(method, r[:, 2:], r[:, 0], r[:, 1]))
        except Exception:  # noqa: BLE001
            continue
    lo, hi = np.quantile(vals, [0.025, 0.975])
    return float(lo), float(hi)
