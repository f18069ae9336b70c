"""Falsification tests, grid execution over discovery settings, ladder aggregation and labels."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .citest import CITester
from .dataset import Dataset
from .discovery import DiscoveryConfig, DiscoveryError, discover
from .effect import ESTIMATORS, EffectEstimate, SensitivityResult, bootstrap_ci, estimate, point_estimate, sensitivity
from .exceptions import EffectGateError, PositivityError
from .graph import CONSTRAINT_LEVELS, BackgroundKnowledge, CausalGraph, KnowledgeViolation, constraint_level
from .identify import AdmissibilityVerdict, gate, has_causal_path
from .overlap import OverlapReport, fit_propensity, overlap_report

log = logging.getLogger(__name__)

LABELS = ("trust", "caution", "reject")
LABEL_MODES = ("ci_rule", "protocol")
SUBSET_FRACTIONS = (0.1, 0.5, 0.8, 0.9)
CAUTION_RATIO = 0.5
PLACEBO_ALPHA = 0.05
MIN_PERMUTATIONS = 200


def _sign(x):
    return 0 if x == 0 else (1 if x > 0 else -1)


@dataclass(frozen=True)
class PlaceboResult:
    """Estimate after one seeded permutation of the treatment, and its permutation p-value.

    ``p`` counts permutations with ``|tau_perm| >= |tau|`` and adds one to
    numerator and denominator, so it never reaches 0.
    """

    tau: float | None
    p: float | None
    n_perm: int
    n_failed: int = 0
    null: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {"tau": self.tau, "p": self.p, "n_perm": self.n_perm, "n_failed": self.n_failed}


def _permuted(d: Dataset, treatment: str, rng) -> Dataset:
    return d.replace_column(treatment, rng.permutation(d.column(treatment)))


def placebo_test(d: Dataset, estimator, seed: int = 0, n_perm: int = MIN_PERMUTATIONS, treatment=None):
    """Permute the treatment, re-estimate with ``estimator`` and locate the result in a permutation null.

    ``estimator`` maps a Dataset to a float and must reuse the run's
    adjustment set. Returns ``(placebo_tau, p)`` via a :class:`PlaceboResult`.
    """
    if n_perm < MIN_PERMUTATIONS:
        raise ValueError(f"n_perm must be at least {MIN_PERMUTATIONS}")
    treatment = treatment or d.treatment
    try:
        tau = float(estimator(_permuted(d, treatment, np.random.default_rng([seed, 0]))))
    except (EffectGateError, ValueError, np.linalg.LinAlgError) as exc:
        log.debug("placebo estimate failed: %s", exc)
        return PlaceboResult(None, None, n_perm, n_perm)
    null = np.full(n_perm, np.nan)
    for b in range(n_perm):
        try:
            null[b] = estimator(_permuted(d, treatment, np.random.default_rng([seed, b + 1])))
        except (EffectGateError, ValueError, np.linalg.LinAlgError):
            continue
    ok = null[np.isfinite(null)]
    if not len(ok):
        return PlaceboResult(tau, None, n_perm, n_perm, ok)
    # tolerance absorbs floating noise when many permutations give the same value
    hits = int(np.sum(np.abs(ok) >= abs(tau) - 1e-12))
    return PlaceboResult(tau, (1 + hits) / (1 + len(ok)), n_perm, n_perm - len(ok), ok)


@dataclass(frozen=True)
class SubsetResult:
    full: float
    estimates: dict
    seed: int = 0

    @property
    def defined(self):
        return [v for v in self.estimates.values() if v is not None]

    @property
    def range(self):
        vals = self.defined
        return (min(vals), max(vals)) if vals else None

    @property
    def width(self):
        r = self.range
        return None if r is None else r[1] - r[0]

    @property
    def sign_consistent(self):
        s = _sign(self.full)
        return s != 0 and all(_sign(v) == s for v in self.defined)

    def max_deviation(self):
        vals = self.defined
        return max(abs(v - self.full) for v in vals) if vals else None

    def to_dict(self):
        r = self.range
        return {
            "full": self.full,
            "estimates": {f"{k:g}": v for k, v in sorted(self.estimates.items())},
            "range": None if r is None else list(r),
            "width": self.width,
            "sign_consistent": self.sign_consistent,
        }


def subset_test(d: Dataset, estimator, fractions=SUBSET_FRACTIONS, seed: int = 0, treatment=None) -> SubsetResult:
    """Re-estimate on seeded subsamples drawn without replacement.

    A fraction whose subsample loses a treatment arm, or whose estimate
    fails, maps to None. Fraction 1 keeps every row in order and reproduces
    the full-sample value exactly.
    """
    treatment = treatment or d.treatment
    full = float(estimator(d))
    out = {}
    for i, f in enumerate(fractions):
        f = float(f)
        if not 0.0 < f <= 1.0:
            raise ValueError("fractions must lie in (0, 1]")
        size = max(1, int(round(f * d.n)))
        idx = np.sort(np.random.default_rng([seed, i]).choice(d.n, size, replace=False))
        sub = d.take(idx)
        t = sub.column(treatment)
        if not (t == 1).any() or not (t == 0).any():
            out[f] = None
            continue
        try:
            out[f] = float(estimator(sub))
        except (EffectGateError, ValueError, np.linalg.LinAlgError):
            out[f] = None
    return SubsetResult(full, out, seed)


@dataclass
class RunRecord:
    algorithm: str
    alpha: float
    seed: int
    level: str
    graph: CausalGraph | None
    verdict: AdmissibilityVerdict
    estimates: tuple = ()
    placebo: PlaceboResult | None = None
    subsets: SubsetResult | None = None
    sensitivity: SensitivityResult | None = None
    overlap: OverlapReport | None = None
    label: str = "reject"
    primary: str = "dr"
    error: str | None = None
    warnings: tuple = ()

    def __post_init__(self):
        if not self.verdict.identifiable and (self.estimates or self.label != "reject"):
            raise ValueError("a non-identifiable run carries no estimates and is rejected")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")

    @property
    def key(self):
        rank = CONSTRAINT_LEVELS.index(self.level) if self.level in CONSTRAINT_LEVELS else len(CONSTRAINT_LEVELS)
        return (rank, self.level, self.algorithm, self.alpha, self.seed)

    def estimate_for(self, name) -> EffectEstimate | None:
        for e in self.estimates:
            if e.estimator == name:
                return e
        return None

    @property
    def main_estimate(self) -> EffectEstimate | None:
        return self.estimate_for(self.primary)

    @property
    def ate(self) -> float | None:
        e = self.main_estimate
        return e.point if e is not None and e.defined else None

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "alpha": self.alpha,
            "seed": self.seed,
            "level": self.level,
            "graph": None if self.graph is None else _graph_dict(self.graph),
            "verdict": self.verdict.to_dict(),
            "primary_estimator": self.primary,
            "ate": self.ate,
            "estimates": [e.to_dict() for e in self.estimates],
            "placebo": None if self.placebo is None else self.placebo.to_dict(),
            "subsets": None if self.subsets is None else self.subsets.to_dict(),
            "sensitivity": None if self.sensitivity is None else self.sensitivity.to_dict(),
            "overlap": None if self.overlap is None else self.overlap.to_dict(),
            "label": self.label,
            "error": self.error,
            "warnings": list(self.warnings),
        }


def _graph_dict(g: CausalGraph):
    return {
        "nodes": list(g.nodes),
        "directed": sorted(map(list, g.directed)),
        "undirected": sorted(map(list, g.undirected)),
    }


def label(rec: RunRecord, mode: str = "protocol", caution_ratio: float = CAUTION_RATIO) -> str:
    """Decision label for one run.

    ``ci_rule``: trust when the ATE is defined and its CI excludes 0.
    ``protocol``: trust additionally needs placebo p above 0.05 and
    sign-consistent subsets. Caution covers defined, sign-consistent runs
    whose subset range is wider than ``caution_ratio * |ATE|``.
    """
    if mode not in LABEL_MODES:
        raise ValueError(f"mode must be one of {LABEL_MODES}")
    est = rec.main_estimate
    if not rec.verdict.identifiable or est is None or not est.defined:
        return "reject"
    if mode == "ci_rule":
        return "trust" if est.ci_excludes_zero else "reject"
    sub = rec.subsets
    consistent = sub is not None and sub.sign_consistent
    placebo_ok = rec.placebo is not None and rec.placebo.p is not None and rec.placebo.p > PLACEBO_ALPHA
    if est.ci_excludes_zero and placebo_ok and consistent:
        return "trust"
    if consistent and sub.width is not None and sub.width > caution_ratio * abs(est.point):
        return "caution"
    return "reject"


@dataclass(frozen=True)
class LevelSummary:
    n_runs: int
    identifiable_rate: float
    mean_ate: float | None
    sd_ate: float | None
    label_rates: dict

    def to_dict(self):
        return {
            "n_runs": self.n_runs,
            "identifiable_rate": self.identifiable_rate,
            "mean_ate": self.mean_ate,
            "sd_ate": self.sd_ate,
            "label_rates": dict(self.label_rates),
        }


def _summarize(records) -> LevelSummary:
    ates = [r.ate for r in records if r.ate is not None]
    n = len(records)
    rates = {lab: sum(r.label == lab for r in records) / n for lab in LABELS}
    if ates:
        arr = np.sort(np.array(ates))
        mean, sd = float(arr.mean()), float(arr.std(ddof=0))
    else:
        mean = sd = None
    return LevelSummary(n, len(ates) / n, mean, sd, rates)


@dataclass(frozen=True)
class LadderSummary:
    levels: dict

    def __getitem__(self, level) -> LevelSummary:
        return self.levels[level]

    def to_dict(self):
        return {lvl: s.to_dict() for lvl, s in self.levels.items()}


def _level_order(level):
    return (CONSTRAINT_LEVELS.index(level), level) if level in CONSTRAINT_LEVELS else (len(CONSTRAINT_LEVELS), level)


def ladder_summary(records) -> LadderSummary:
    """Per-level identifiable rate, mean and population SD of defined ATEs, and label rates."""
    records = list(records)
    if not records:
        raise ValueError("ladder_summary needs at least one record")
    groups = {}
    for r in sorted(records, key=lambda r: r.key):
        groups.setdefault(r.level, []).append(r)
    return LadderSummary({lvl: _summarize(groups[lvl]) for lvl in sorted(groups, key=_level_order)})


def alpha_stability(records) -> dict:
    """Per level and algorithm: identifiable rate, mean and SD of defined ATEs across the α grid."""
    groups = {}
    for r in sorted(records, key=lambda r: r.key):
        groups.setdefault((r.level, r.algorithm), []).append(r)
    out = {}
    for (lvl, alg), recs in sorted(groups.items(), key=lambda kv: (_level_order(kv[0][0]), kv[0][1])):
        out.setdefault(lvl, {})[alg] = _summarize(recs).to_dict()
    return out


def decision(records, caution_ratio: float = CAUTION_RATIO) -> dict:
    """Overall verdict across all runs.

    Trust needs at least one trusted run and identifiable runs that agree in
    sign with a spread (max minus min ATE) within ``caution_ratio`` of the
    mean. Sign agreement with a wider spread, or only caution-labelled runs,
    gives caution. Anything else is reject.
    """
    records = list(records)
    ates = [r.ate for r in records if r.ate is not None]
    n_trust = sum(r.label == "trust" for r in records)
    n_caution = sum(r.label == "caution" for r in records)
    out = {"n_runs": len(records), "n_identifiable": len(ates), "n_trust": n_trust, "n_caution": n_caution}
    if not ates or not (n_trust or n_caution):
        return {**out, "decision": "reject", "reason": "no run passed the gate with a supported effect"}
    signs = {_sign(a) for a in ates}
    spread = max(ates) - min(ates)
    mean = float(np.mean(ates))
    out.update(spread=spread, mean_ate=mean)
    if len(signs) > 1 or 0 in signs:
        return {**out, "decision": "reject", "reason": "identifiable runs disagree in sign"}
    if n_trust and spread <= caution_ratio * abs(mean):
        return {**out, "decision": "trust", "reason": "effect stable across runs and falsification passed"}
    return {**out, "decision": "caution", "reason": "sign-consistent but magnitude sensitive"}


@dataclass(frozen=True)
class GridSettings:
    """Everything a run needs beyond its identity."""

    treatment: str
    outcome: str
    estimators: tuple = ESTIMATORS
    primary: str = "dr"
    n_bootstrap: int = 0
    n_perm: int = MIN_PERMUTATIONS
    fractions: tuple = SUBSET_FRACTIONS
    label_mode: str = "protocol"
    caution_ratio: float = CAUTION_RATIO
    ci_test: str = "dg_lrt"
    max_condset: int | None = None
    refute: bool = True

    def __post_init__(self):
        if self.primary not in self.estimators:
            raise ValueError("the primary estimator must be one of the requested estimators")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")


@dataclass
class _Analysis:
    """Everything downstream of the adjustment set, shared by runs that pick the same set."""

    overlap: OverlapReport | None = None
    estimates: tuple = ()
    placebo: PlaceboResult | None = None
    subsets: SubsetResult | None = None
    sensitivity: SensitivityResult | None = None
    positivity: str | None = None
    warnings: tuple = ()


def _analyze(d: Dataset, adj: tuple, seed: int, s: GridSettings) -> _Analysis:
    t, y = s.treatment, s.outcome
    caught = []
    with warnings.catch_warnings(record=True) as wlog:
        warnings.simplefilter("always")
        try:
            m = fit_propensity(d, adj, t)
            trimmed, ov = overlap_report(d, m, list(adj), t)
        except PositivityError as exc:
            return _Analysis(positivity=str(exc), warnings=tuple(sorted({str(w.message) for w in wlog})))
        ests = []
        for name in s.estimators:
            try:
                est = estimate(trimmed, name, adj, t, y)
            except PositivityError as exc:
                est = EffectEstimate.undefined(name, str(exc), trimmed.n)
            if est.defined and s.n_bootstrap:
                boot = bootstrap_ci(
                    lambda b, name=name: point_estimate(b, name, adj, t, y), trimmed, s.n_bootstrap, seed
                )
                if boot.low is not None:
                    est = est.with_ci(boot.low, boot.high, "bootstrap")
            ests.append(est)
        main = next(e for e in ests if e.estimator == s.primary)
        placebo = subsets = sens = None
        if s.refute and main.defined:
            closure = lambda b: point_estimate(b, s.primary, adj, t, y)  # noqa: E731
            placebo = placebo_test(trimmed, closure, seed, s.n_perm, t)
            try:
                subsets = subset_test(trimmed, closure, s.fractions, seed, t)
            except (EffectGateError, ValueError) as exc:
                caught.append(f"subset test failed: {exc}")
        if main.defined:
            try:
                sens = sensitivity(trimmed, t, y, adj)
            except EffectGateError as exc:
                caught.append(f"sensitivity failed: {exc}")
        caught.extend(str(w.message) for w in wlog)
    return _Analysis(ov, tuple(ests), placebo, subsets, sens, None, tuple(sorted(set(caught))))


def _knowledge_for(level, d: Dataset, s: GridSettings, knowledge):
    if knowledge and level in knowledge:
        return knowledge[level]
    return constraint_level(level, d.names, outcome=s.outcome, treatment=s.treatment)


def _run_one(d, algorithm, alpha, seed, level, k: BackgroundKnowledge, s: GridSettings, tester, cache) -> RunRecord:
    ident = dict(algorithm=algorithm, alpha=alpha, seed=seed, level=level, primary=s.primary)
    cfg = DiscoveryConfig(algorithm, alpha, seed, k, s.max_condset)
    try:
        g = discover(d, cfg, tester if algorithm == "pc" else None)
    except (DiscoveryError, KnowledgeViolation, EffectGateError) as exc:
        v = AdmissibilityVerdict(False, graph_class_ok=False, failure_reason="not_dag", detail=f"discovery failed: {exc}")
        return RunRecord(graph=None, verdict=v, error=str(exc), **ident)
    v = gate(g, s.treatment, s.outcome)
    if v.identifiable and not has_causal_path(g, s.treatment, s.outcome):
        # the hypothesis itself entails a zero effect, so there is nothing to validate
        v = v.fail("no_valid_adjustment", f"no causal path from {s.treatment} to {s.outcome} in the discovered graph")
    if not v.identifiable:
        return RunRecord(graph=g, verdict=v, **ident)
    key = (v.adjustment_set, seed)
    if key not in cache:
        cache[key] = _analyze(d, v.adjustment_set, seed, s)
    a = cache[key]
    if a.positivity is not None:
        return RunRecord(graph=g, verdict=v.fail("positivity_violation", a.positivity), warnings=a.warnings, **ident)
    rec = RunRecord(
        graph=g,
        verdict=v,
        estimates=a.estimates,
        placebo=a.placebo,
        subsets=a.subsets,
        sensitivity=a.sensitivity,
        overlap=a.overlap,
        warnings=a.warnings,
        **ident,
    )
    return replace(rec, label=label(rec, s.label_mode, s.caution_ratio))


def _run_batch(d, batch, s, knowledge_by_level, tester=None):
    tester = tester if tester is not None else CITester(d, s.ci_test)
    cache = {}
    return [_run_one(d, alg, a, sd, lvl, knowledge_by_level[lvl], s, tester, cache) for alg, a, sd, lvl in batch]


def run_grid(
    d: Dataset,
    algorithms,
    alphas,
    seeds,
    level,
    settings: GridSettings | None = None,
    knowledge: dict | None = None,
    n_jobs: int = 1,
    tester=None,
) -> list[RunRecord]:
    """Execute discovery, gate, trimming, estimation, refutation and labelling for every grid cell.

    ``level`` is one constraint level or a list of them. ``knowledge`` may
    map a level to an explicit :class:`BackgroundKnowledge`; otherwise the
    built-in constraint ladder is used. ``tester`` replaces the data-driven
    CI test for PC (for example a d-separation oracle). Per-run failures are
    stored on the record. Records come back sorted by (level, algorithm,
    alpha, seed).
    """
    levels = [level] if isinstance(level, str) else list(level)
    if settings is None:
        settings = GridSettings(d.treatment, d.outcome)
    kb = {lvl: _knowledge_for(lvl, d, settings, knowledge) for lvl in levels}
    cells = [(alg, float(a), int(sd), lvl) for lvl in levels for alg in algorithms for a in alphas for sd in seeds]
    if n_jobs == 1 or len(cells) < 2:
        records = _run_batch(d, cells, settings, kb, tester)
    else:
        from joblib import Parallel, delayed

        n_workers = min(len(cells), n_jobs if n_jobs > 0 else len(cells))
        # contiguous chunks keep neighbouring cells (same level and algorithm) in one cache
        bounds = np.linspace(0, len(cells), n_workers + 1).astype(int)
        batches = [cells[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
        parts = Parallel(n_jobs=n_workers)(delayed(_run_batch)(d, b, settings, kb, tester) for b in batches)
        records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: r.key)


def label_counts(records) -> dict:
    counts = {lab: 0 for lab in LABELS}
    for r in records:
        counts[r.label] += 1
    return counts

