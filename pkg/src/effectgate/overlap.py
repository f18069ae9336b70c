"""Positivity diagnostics: propensity model, common-support trimming, SMD and ESS."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import Dataset
from .exceptions import DomainError, PositivityError, SeparationWarning
from .glm import add_intercept, fit_glm

E_BOUND = 1e-6
BALANCE_THRESHOLD = 0.1


def _check_binary(t, name="treatment"):
    t = np.asarray(t, float).ravel()
    if not np.all((t == 0) | (t == 1)):
        raise DomainError(f"{name} must be binary 0/1")
    return t


class PropensityModel(ClassifierMixin, BaseEstimator):
    """Logistic treatment model fit by IRLS.

    Parameters
    ----------
    ridge : float
        Added to the Hessian diagonal at every Newton step.
    max_iter : int
        Newton iterations before giving up.
    tol : float
        Convergence threshold on the max-norm of the score vector.
    covariates : sequence of str, optional
        Column names used by :meth:`scores` when called with a Dataset.
    """

    def __init__(self, ridge=1e-6, max_iter=100, tol=1e-8, covariates=None):
        self.ridge = ridge
        self.max_iter = max_iter
        self.tol = tol
        self.covariates = covariates

    def _design(self, X):
        X = check_array(X, ensure_min_features=0, ensure_min_samples=1, dtype=float)
        return add_intercept(X) if X.shape[1] else np.ones((X.shape[0], 1))

    def fit(self, X, t):
        t = _check_binary(t)
        Z = self._design(X)
        if len(Z) != len(t):
            raise ValueError("X and t have different lengths")
        fit = fit_glm(Z, t, "binomial", ridge=self.ridge, max_iter=self.max_iter, tol=self.tol)
        self.classes_ = np.array([0, 1])
        self.intercept_ = float(fit.coef[0])
        self.coef_ = fit.coef[1:].copy()
        self.converged_ = fit.converged
        self.n_iter_ = fit.n_iter
        self.loglik_path_ = fit.loglik_path
        self.n_features_in_ = Z.shape[1] - 1
        e = fit.predict(Z)
        # under separation the score vector vanishes while coefficients diverge,
        # so the convergence flag alone cannot detect it; extreme scores can
        self.separated_ = bool(np.any((e <= E_BOUND) | (e >= 1 - E_BOUND)))
        if self.separated_:
            warnings.warn(
                f"some fitted propensity scores are outside ({E_BOUND}, {1 - E_BOUND}); "
                "treatment looks (quasi-)separated",
                SeparationWarning,
                stacklevel=2,
            )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        Z = self._design(X)
        return Z @ np.concatenate([[self.intercept_], self.coef_])

    def predict_proba(self, X):
        eta = self.decision_function(X)
        e = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        return np.column_stack([1.0 - e, e])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @property
    def coefficients(self):
        check_is_fitted(self, "coef_")
        names = list(self.covariates or [f"x{i}" for i in range(len(self.coef_))])
        return {"intercept": self.intercept_, **dict(zip(names, map(float, self.coef_)))}

    def scores(self, d: Dataset) -> np.ndarray:
        """Propensity e(x) for every row of ``d`` using the stored covariate names."""
        X = d.matrix(self.covariates or [])
        return self.predict_proba(X)[:, 1]


def fit_propensity(d: Dataset, adjustment, treatment=None, **params) -> PropensityModel:
    treatment = treatment or d.treatment
    covs = list(adjustment)
    model = PropensityModel(covariates=covs, **params)
    return model.fit(d.matrix(covs), d.column(treatment))


def common_support(e, t):
    """``[max(min e_T, min e_C), min(max e_T, max e_C)]``; lo > hi means no overlap."""
    e = np.asarray(e, float)
    t = _check_binary(t)
    et, ec = e[t == 1], e[t == 0]
    if not len(et) or not len(ec):
        raise PositivityError("a treatment arm is empty")
    return max(et.min(), ec.min()), min(et.max(), ec.max())


@dataclass
class OverlapReport:
    ps_range_treated: tuple
    ps_range_control: tuple
    common_support: tuple
    n_before: int
    n_after: int
    excluded_treated: int
    excluded_control: int
    smd_before: dict = field(default_factory=dict)
    smd_after: dict = field(default_factory=dict)
    ess_overall: float | None = None
    ess_treated: float | None = None
    ess_control: float | None = None
    threshold: float = BALANCE_THRESHOLD

    @property
    def max_smd_after(self):
        vals = [abs(v) for v in self.smd_after.values() if v is not None]
        return max(vals) if vals else None

    @property
    def balanced(self):
        m = self.max_smd_after
        return m is None or m < self.threshold

    def to_dict(self):
        return {
            "ps_range_treated": list(self.ps_range_treated),
            "ps_range_control": list(self.ps_range_control),
            "common_support": list(self.common_support),
            "n_before": self.n_before,
            "n_after": self.n_after,
            "excluded_treated": self.excluded_treated,
            "excluded_control": self.excluded_control,
            "smd_before": self.smd_before,
            "smd_after": self.smd_after,
            "max_smd_after": self.max_smd_after,
            "balanced": self.balanced,
            "balance_threshold": self.threshold,
            "ess_overall": self.ess_overall,
            "ess_treated": self.ess_treated,
            "ess_control": self.ess_control,
        }


def trim_by_scores(d: Dataset, e, treatment=None):
    """Drop rows whose score lies outside the closed common-support interval."""
    treatment = treatment or d.treatment
    e = np.asarray(e, float)
    t = d.column(treatment)
    lo, hi = common_support(e, t)
    if lo > hi:
        raise PositivityError(f"propensity ranges of the arms are disjoint (support [{lo:.6g}, {hi:.6g}] is empty)")
    keep = (e >= lo) & (e <= hi)
    report = OverlapReport(
        ps_range_treated=(float(e[t == 1].min()), float(e[t == 1].max())),
        ps_range_control=(float(e[t == 0].min()), float(e[t == 0].max())),
        common_support=(float(lo), float(hi)),
        n_before=d.n,
        n_after=int(keep.sum()),
        excluded_treated=int((~keep & (t == 1)).sum()),
        excluded_control=int((~keep & (t == 0)).sum()),
    )
    kept_t = t[keep]
    if not np.any(kept_t == 1) or not np.any(kept_t == 0):
        raise PositivityError("trimming left a treatment arm empty")
    return d.take(np.flatnonzero(keep)), report, keep


def trim_common_support(d: Dataset, m: PropensityModel, treatment=None):
    """Return ``(trimmed dataset, partial OverlapReport)``."""
    trimmed, report, _ = trim_by_scores(d, m.scores(d), treatment)
    return trimmed, report


def smd(d: Dataset, covariate: str, weights=None, treatment=None):
    """Standardized mean difference treated minus control.

    Means are weighted when ``weights`` is given; the pooled SD always uses
    unweighted sample variances. Returns None when the pooled variance is 0.
    """
    treatment = treatment or d.treatment
    x = d.column(covariate)
    t = d.column(treatment)
    return smd_arrays(x, t, weights)


def smd_arrays(x, t, weights=None):
    x = np.asarray(x, float)
    t = _check_binary(t)
    mt, mc = t == 1, t == 0
    if not mt.any() or not mc.any():
        raise PositivityError("SMD needs both treatment arms")
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    mean_t = np.average(x[mt], weights=w[mt])
    mean_c = np.average(x[mc], weights=w[mc])
    var_t = x[mt].var(ddof=1) if mt.sum() > 1 else 0.0
    var_c = x[mc].var(ddof=1) if mc.sum() > 1 else 0.0
    pooled = np.sqrt((var_t + var_c) / 2.0)
    if pooled == 0:
        return None
    return float((mean_t - mean_c) / pooled)


def ess(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, float)
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    sq = float(w @ w)
    if sq == 0:
        raise DomainError("weights are all zero")
    return float(w.sum() ** 2 / sq)


def ipw_weights(t, e, normalize=True) -> np.ndarray:
    """Inverse-probability weights, rescaled to mean 1 within each arm when ``normalize``."""
    t = _check_binary(t)
    e = np.asarray(e, float)
    w = np.where(t == 1, 1.0 / e, 1.0 / (1.0 - e))
    if normalize:
        for arm in (0, 1):
            mask = t == arm
            if mask.any():
                w[mask] *= mask.sum() / w[mask].sum()
    return w


def overlap_report(d: Dataset, m: PropensityModel, covariates=None, treatment=None, threshold=BALANCE_THRESHOLD):
    """Full diagnostics: trimming, SMD before (raw) and after (IPW on the trimmed sample), ESS.

    Returns ``(trimmed dataset, OverlapReport)``.
    """
    treatment = treatment or d.treatment
    covariates = list(m.covariates or []) if covariates is None else list(covariates)
    trimmed, report, keep = trim_by_scores(d, m.scores(d), treatment)
    report.threshold = threshold
    report.smd_before = {c: smd(d, c, None, treatment) for c in covariates}
    e = m.scores(trimmed)
    t = trimmed.column(treatment)
    w = ipw_weights(t, e)
    report.smd_after = {c: smd(trimmed, c, w, treatment) for c in covariates}
    report.ess_overall = ess(w)
    report.ess_treated = ess(w[t == 1])
    report.ess_control = ess(w[t == 0])
    return trimmed, report
