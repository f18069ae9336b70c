"""Synthetic structural causal models with interventional ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit

from .dataset import Dataset, VariableSpec
from .exceptions import EffectGateError
from .graph import CausalGraph, topological_order

MECHANISMS = {"logistic": "binary", "poisson": "count", "linear_gaussian": "continuous"}


def poisson_quantile(u, rate):
    """Smallest k with P(K <= k) >= u, vectorized by accumulating the pmf."""
    u = np.asarray(u, float)
    rate = np.broadcast_to(np.asarray(rate, float), u.shape)
    k = np.zeros(u.shape)
    pmf = np.exp(-rate)
    cdf = pmf.copy()
    active = u > cdf
    step = 0
    while active.any():
        step += 1
        idx = np.flatnonzero(active)
        pmf[idx] *= rate[idx] / step
        cdf[idx] += pmf[idx]
        k[idx] = step
        # guard against cdf stalling below u through rounding
        active[idx] = (u[idx] > cdf[idx]) & (pmf[idx] > 0)
    return k


@dataclass(frozen=True)
class Mechanism:
    kind: str
    intercept: float = 0.0
    coefficients: dict = field(default_factory=dict)
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise EffectGateError(f"mechanism kind must be one of {sorted(MECHANISMS)}")
        object.__setattr__(self, "coefficients", dict(self.coefficients))

    def linear(self, values: dict, n: int) -> np.ndarray:
        eta = np.full(n, float(self.intercept))
        for parent, coef in sorted(self.coefficients.items()):
            eta = eta + coef * values[parent]
        return eta

    def mean(self, eta):
        if self.kind == "logistic":
            return expit(eta)
        if self.kind == "poisson":
            return np.exp(eta)
        return eta

    def draw(self, eta, u):
        """Map linear predictor and a uniform(0,1) draw to a value (inverse CDF)."""
        if self.kind == "logistic":
            return (u < expit(eta)).astype(float)
        if self.kind == "poisson":
            return poisson_quantile(u, np.exp(eta))
        return eta + self.noise_sd * stats.norm.ppf(u)

    def to_dict(self):
        return {
            "kind": self.kind,
            "intercept": self.intercept,
            "coefficients": dict(sorted(self.coefficients.items())),
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["kind"], obj.get("intercept", 0.0), obj.get("coefficients", {}), obj.get("noise_sd", 1.0))


@dataclass(frozen=True)
class ScmSpec:
    graph: CausalGraph
    mechanisms: dict
    seed: int = 0
    treatment: str | None = None
    outcome: str | None = None
    name: str = "custom"

    def __post_init__(self):
        if not self.graph.is_dag:
            raise EffectGateError("SCM graph must be a DAG")
        if set(self.mechanisms) != set(self.graph.nodes):
            raise EffectGateError("need exactly one mechanism per graph node")
        for v in self.graph.nodes:
            m = self.mechanisms[v]
            if set(m.coefficients) != self.graph.parents(v):
                raise EffectGateError(
                    f"mechanism parents of {v!r} {sorted(m.coefficients)} differ from graph parents "
                    f"{sorted(self.graph.parents(v))}"
                )
        for role, v in (("treatment", self.treatment), ("outcome", self.outcome)):
            if v is not None and self.mechanisms[v].kind != "logistic":
                raise EffectGateError(f"{role} {v!r} must have a logistic (binary) mechanism")

    def variable_specs(self):
        out = []
        for v in self.graph.nodes:
            role = "treatment" if v == self.treatment else "outcome" if v == self.outcome else "covariate"
            out.append(VariableSpec(v, MECHANISMS[self.mechanisms[v].kind], role))
        return out

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "treatment": self.treatment,
            "outcome": self.outcome,
            "nodes": list(self.graph.nodes),
            "edges": [[a, b] for a, b, _, _ in self.graph.edges],
            "mechanisms": {v: self.mechanisms[v].to_dict() for v in self.graph.nodes},
        }

    @classmethod
    def from_dict(cls, obj):
        g = CausalGraph(obj["nodes"], [tuple(e) for e in obj["edges"]])
        mechs = {v: Mechanism.from_dict(m) for v, m in obj["mechanisms"].items()}
        return cls(g, mechs, obj.get("seed", 0), obj.get("treatment"), obj.get("outcome"), obj.get("name", "custom"))


def _simulate(spec: ScmSpec, n: int, rng, interventions=None, expect=None):
    interventions = interventions or {}
    order = topological_order(spec.graph)
    # one uniform column per node, drawn in declaration order, so that
    # interventions reuse the same exogenous noise (common random numbers)
    u = {v: rng.random(n) for v in spec.graph.nodes}
    values = {}
    for v in order:
        if v in interventions:
            values[v] = np.full(n, float(interventions[v]))
            continue
        m = spec.mechanisms[v]
        eta = m.linear(values, n)
        values[v] = m.mean(eta) if v == expect else m.draw(eta, u[v])
    return values


def sample(spec: ScmSpec, n: int, seed: int | None = None, interventions=None) -> Dataset:
    """Ancestral sample of ``n`` units; ``interventions`` maps node -> fixed value (do)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    values = _simulate(spec, n, rng, interventions)
    rows = np.column_stack([values[v] for v in spec.graph.nodes])
    return Dataset(spec.variable_specs(), rows)


def sample_replication(spec: ScmSpec, n: int, replication: int) -> Dataset:
    """Independent replicate stream derived from ``(spec.seed, replication)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([spec.seed, replication])
    values = _simulate(spec, n, rng)
    return Dataset(spec.variable_specs(), np.column_stack([values[v] for v in spec.graph.nodes]))


def interventional_means(spec: ScmSpec, t: str, y: str, n_mc: int = 200_000, seed: int | None = None):
    """Monte-Carlo E[y | do(t=1)] and E[y | do(t=0)] with their per-arm draws.

    Both arms share exogenous noise; the outcome is replaced by its conditional
    mean given its parents, which keeps the estimate unbiased with less noise.
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be >= 10,000")
    spec.graph._check(t), spec.graph._check(y)
    out = {}
    for arm in (1, 0):
        rng = np.random.default_rng(spec.seed if seed is None else seed)
        out[arm] = _simulate(spec, n_mc, rng, {t: arm}, expect=y)[y]
    return out[1], out[0]


def true_ate(spec: ScmSpec, t: str | None = None, y: str | None = None, n_mc: int = 200_000, seed=None) -> float:
    """``E[y | do(t=1)] - E[y | do(t=0)]`` by severing ``t`` from its parents."""
    t = t or spec.treatment
    y = y or spec.outcome
    y1, y0 = interventional_means(spec, t, y, n_mc, seed)
    return float(np.mean(y1 - y0))


def true_ate_se(spec: ScmSpec, t=None, y=None, n_mc: int = 200_000, seed=None) -> float:
    t = t or spec.treatment
    y = y or spec.outcome
    y1, y0 = interventional_means(spec, t, y, n_mc, seed)
    return float(np.std(y1 - y0, ddof=1) / math.sqrt(n_mc))


# domain-like graph over the six retention variables
DOMAIN_NODES = ("R1", "PvP", "Web3", "Time_Play_Level1", "Total_PvE_Battle", "Total_Session")
DOMAIN_EDGES = (
    ("PvP", "R1"),
    ("Web3", "PvP"),
    ("Web3", "R1"),
    ("PvP", "Total_PvE_Battle"),
    ("Time_Play_Level1", "Total_PvE_Battle"),
    ("Total_PvE_Battle", "Total_Session"),
    ("Total_Session", "R1"),
)


def domain_graph(direct_effect: bool = True) -> CausalGraph:
    edges = [e for e in DOMAIN_EDGES if direct_effect or e != ("PvP", "R1")]
    return CausalGraph(DOMAIN_NODES, edges)


def _domain_spec(name, seed, *, pvp, r1, pve=(2.004, 0.777, 0.02), session=(0.906, 0.04), direct=True, path=True):
    pve_int, pve_pvp, pve_tpl = pve
    g = domain_graph(direct)
    if not path:
        g = g.replace(directed=[e for e in g.directed if e != ("PvP", "Total_PvE_Battle")])
    r1_coef = {"Web3": r1[2], "Total_Session": r1[3]}
    if direct:
        r1_coef["PvP"] = r1[1]
    pve_coef = {"Time_Play_Level1": pve_tpl}
    if path:
        pve_coef["PvP"] = pve_pvp
    mechs = {
        "Web3": Mechanism("logistic", math.log(0.48 / 0.52)),
        "PvP": Mechanism("logistic", pvp[0], {"Web3": pvp[1]}),
        "Time_Play_Level1": Mechanism("linear_gaussian", 7.8, {}, 2.0),
        "Total_PvE_Battle": Mechanism("poisson", pve_int, pve_coef),
        "Total_Session": Mechanism("poisson", session[0], {"Total_PvE_Battle": session[1]}),
        "R1": Mechanism("logistic", r1[0], r1_coef),
    }
    return ScmSpec(g, mechs, seed, "PvP", "R1", name)


SCENARIOS = ("self_selection", "null_effect", "mediation_only", "positivity_violation", "knowledge_only")
SCENARIO_ALIASES = {"a": "self_selection", "b": "null_effect", "c": "mediation_only", "d": "positivity_violation"}

# targets for the self-selection preset: treated share and retention rate
SELF_SELECTION_TARGETS = {"treated_fraction": 0.2586, "retention": 0.7039}


def scenario(name: str, seed: int = 0) -> ScmSpec:
    """Preset generators.

    ``self_selection`` (a): Web3 confounds treatment and retention, PvP acts
    directly and through PvE battles -> sessions. ``null_effect`` (b): PvP has
    no path to R1. ``mediation_only`` (c): no direct PvP -> R1 edge.
    ``positivity_violation`` (d): treatment almost determined by Web3.
    ``knowledge_only``: the Web3/PvP/R1 triangle alone. Every pair is
    adjacent, so data cannot orient Web3 -- PvP and only the ban on edges
    into Web3 makes the effect identifiable.
    """
    name = SCENARIO_ALIASES.get(name, name)
    if name == "self_selection":
        return _domain_spec(name, seed, pvp=(-1.866, 1.432), r1=(0.0006, 0.66, 0.8, 0.1))
    if name == "null_effect":
        return _domain_spec(name, seed, pvp=(-1.866, 1.432), r1=(0.25, 0.0, 0.8, 0.1), direct=False, path=False)
    if name == "mediation_only":
        return _domain_spec(
            name, seed, pvp=(-1.866, 1.432), r1=(-0.884, 0.0, 0.8, 0.3), session=(0.906, 0.06), direct=False
        )
    if name == "positivity_violation":
        return _domain_spec(name, seed, pvp=(-12.0, 24.0), r1=(0.0006, 0.66, 0.8, 0.1))
    if name == "knowledge_only":
        g = CausalGraph(("R1", "PvP", "Web3"), [("Web3", "PvP"), ("Web3", "R1"), ("PvP", "R1")])
        mechs = {
            "Web3": Mechanism("logistic", math.log(0.48 / 0.52)),
            "PvP": Mechanism("logistic", -1.866, {"Web3": 1.432}),
            "R1": Mechanism("logistic", 0.4, {"PvP": 0.66, "Web3": 0.8}),
        }
        return ScmSpec(g, mechs, seed, "PvP", "R1", name)
    raise EffectGateError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


def with_seed(spec: ScmSpec, seed: int) -> ScmSpec:
    return replace(spec, seed=seed)


def random_dag(n_nodes: int, edge_prob: float, rng, prefix: str = "X") -> CausalGraph:
    """Erdős-Rényi DAG under a random node permutation."""
    names = [f"{prefix}{i}" for i in range(n_nodes)]
    perm = rng.permutation(n_nodes)
    edges = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.append((names[perm[i]], names[perm[j]]))
    return CausalGraph(names, edges)


def random_linear_scm(g: CausalGraph, rng, treatment=None, outcome=None, seed=0) -> ScmSpec:
    """Linear-Gaussian SCM on ``g`` with coefficients in ±[0.5, 1.5]."""
    mechs = {}
    for v in g.nodes:
        coefs = {p: float(rng.choice([-1, 1]) * rng.uniform(0.5, 1.5)) for p in sorted(g.parents(v))}
        mechs[v] = Mechanism("linear_gaussian", 0.0, coefs, 1.0)
    return ScmSpec(g, mechs, seed, treatment, outcome, "random_linear")
