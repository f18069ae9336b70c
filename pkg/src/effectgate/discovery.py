"""Constraint-aware structure learning: stable PC and greedy BIC hill climbing."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .citest import ALPHA_GRID, CITester, embed
from .dataset import Dataset
from .exceptions import DegenerateDataError, EffectGateError
from .graph import BackgroundKnowledge, CausalGraph, apply_knowledge

logger = logging.getLogger(__name__)

ALGORITHMS = ("pc", "score_greedy")


class DiscoveryError(EffectGateError):
    """A discovery run could not complete."""


@dataclass(frozen=True)
class DiscoveryConfig:
    algorithm: str = "pc"
    alpha: float = 0.05
    seed: int = 0
    knowledge: BackgroundKnowledge = field(default_factory=BackgroundKnowledge)
    max_condset: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_condset is not None and self.max_condset < 0:
            raise ValueError("max_condset must be >= 0")


class _PDAG:
    """Mutable partially directed graph used during orientation."""

    def __init__(self, nodes, adjacency, knowledge):
        self.nodes = list(nodes)
        self.pos = {v: i for i, v in enumerate(self.nodes)}
        self.adj = {v: set(adjacency[v]) for v in self.nodes}
        self.arrows = set()  # (a, b): a -> b
        self.k = knowledge

    def undirected(self, a, b):
        return b in self.adj[a] and (a, b) not in self.arrows and (b, a) not in self.arrows

    def directed(self, a, b):
        return (a, b) in self.arrows

    def adjacent(self, a, b):
        return b in self.adj[a]

    def _reaches(self, src, dst):
        stack, seen = [src], {src}
        while stack:
            v = stack.pop()
            if v == dst:
                return True
            for a, b in self.arrows:
                if a == v and b not in seen:
                    seen.add(b)
                    stack.append(b)
        return False

    def can_orient(self, a, b):
        return self.undirected(a, b) and not self.k.is_forbidden(a, b) and not self._reaches(b, a)

    def orient(self, a, b):
        if self.can_orient(a, b):
            self.arrows.add((a, b))
            return True
        return False

    def pairs(self):
        for a, b in itertools.combinations(self.nodes, 2):
            if self.adjacent(a, b):
                yield a, b

    def to_graph(self):
        directed = sorted(self.arrows)
        undirected = [(a, b) for a, b in self.pairs() if self.undirected(a, b)]
        return CausalGraph(self.nodes, directed, undirected)


def _meek(p: _PDAG) -> None:
    """Apply Meek rules R1-R4 until no edge changes."""
    nodes = p.nodes
    changed = True
    while changed:
        changed = False
        for a in nodes:
            for b in sorted(p.adj[a], key=p.pos.get):
                if not p.undirected(a, b):
                    continue
                if _meek_applies(p, a, b) and p.orient(a, b):
                    changed = True


def _meek_applies(p, a, b):
    others = [c for c in p.nodes if c not in (a, b)]
    # R1: c -> a -- b, c and b non-adjacent
    for c in others:
        if p.directed(c, a) and not p.adjacent(c, b):
            return True
    # R2: a -> c -> b and a -- b
    for c in others:
        if p.directed(a, c) and p.directed(c, b):
            return True
    # R3: a -- c -> b, a -- d -> b, c and d non-adjacent
    mids = [c for c in others if p.undirected(a, c) and p.directed(c, b)]
    for c, d in itertools.combinations(mids, 2):
        if not p.adjacent(c, d):
            return True
    # R4: a -- d -> c -> b, a adjacent to c, d and b non-adjacent
    for d in others:
        if not p.undirected(a, d):
            continue
        for c in others:
            if c != d and p.directed(d, c) and p.directed(c, b) and p.adjacent(a, c) and not p.adjacent(d, b):
                return True
    return False


@dataclass
class PCResult:
    graph: CausalGraph
    sepsets: dict
    n_tests: int


def pc_search(nodes, tester, alpha, knowledge=None, max_condset=None) -> PCResult:
    """Stable PC over ``nodes`` using ``tester(x, y, z) -> CITestResult``."""
    knowledge = knowledge or BackgroundKnowledge()
    nodes = list(nodes)
    adj = {v: {u for u in nodes if u != v} for v in nodes}
    for a, b in itertools.combinations(nodes, 2):
        required = knowledge.is_required(a, b) or knowledge.is_required(b, a)
        if knowledge.is_forbidden(a, b) and knowledge.is_forbidden(b, a) and not required:
            adj[a].discard(b)
            adj[b].discard(a)

    sepsets = {}
    n_tests = 0
    depth = 0
    while max_condset is None or depth <= max_condset:
        frozen = {v: set(adj[v]) for v in nodes}
        testable = False
        removals = []
        for x, y in itertools.combinations(nodes, 2):
            if y not in frozen[x]:
                continue
            if knowledge.is_required(x, y) or knowledge.is_required(y, x):
                continue
            found = None
            for side, other in ((x, y), (y, x)):
                pool = sorted(frozen[side] - {other}, key=nodes.index)
                if len(pool) < depth:
                    continue
                testable = True
                for cond in itertools.combinations(pool, depth):
                    try:
                        res = tester(x, y, cond)
                    except DegenerateDataError as exc:
                        raise DiscoveryError(f"CI test failed for pair ({x}, {y}) given {list(cond)}: {exc}") from exc
                    n_tests += 1
                    if res.p_value > alpha:
                        found = frozenset(cond)
                        break
                if found is not None:
                    break
            if found is not None:
                removals.append((x, y, found))
        for x, y, cond in removals:
            adj[x].discard(y)
            adj[y].discard(x)
            sepsets[frozenset((x, y))] = cond
        if not testable:
            break
        depth += 1

    # colliders x -> z <- y for unshielded triples with z outside sepset(x, y)
    graph = _orient(nodes, adj, knowledge, lambda x, z, y: z not in sepsets.get(frozenset((x, y)), frozenset()))
    return PCResult(graph, sepsets, n_tests)


def _orient(nodes, adj, knowledge, is_collider) -> CausalGraph:
    """Orient a skeleton: knowledge first, then unshielded colliders, then Meek closure."""
    p = _PDAG(nodes, adj, knowledge)
    for a, b in sorted(knowledge.required, key=lambda e: (nodes.index(e[0]), nodes.index(e[1]))):
        if p.adjacent(a, b):
            p.arrows.add((a, b))
    for a, b in list(p.pairs()):
        if p.undirected(a, b):
            if knowledge.is_forbidden(a, b) and not knowledge.is_forbidden(b, a):
                p.orient(b, a)
            elif knowledge.is_forbidden(b, a) and not knowledge.is_forbidden(a, b):
                p.orient(a, b)
    for z in nodes:
        for x, y in itertools.combinations(sorted(p.adj[z], key=nodes.index), 2):
            if p.adjacent(x, y) or not is_collider(x, z, y):
                continue
            for a in (x, y):
                if not p.directed(a, z) and p.undirected(a, z):
                    p.orient(a, z)
    _meek(p)
    return apply_knowledge(p.to_graph(), knowledge)


def dag_to_cpdag(g: CausalGraph, knowledge=None) -> CausalGraph:
    """Equivalence class of DAG ``g`` narrowed by ``knowledge``.

    Keeps the skeleton and v-structures of ``g``, orients what the knowledge
    fixes and closes under the Meek rules. ``g`` must satisfy ``knowledge``.
    """
    knowledge = knowledge or BackgroundKnowledge()
    nodes = list(g.nodes)
    adj = {v: set() for v in nodes}
    for a, b in g.directed:
        adj[a].add(b)
        adj[b].add(a)
    return _orient(nodes, adj, knowledge, lambda x, z, y: (x, z) in g.directed and (y, z) in g.directed)


def pc(d: Dataset | None, cfg: DiscoveryConfig, tester=None) -> CausalGraph:
    """Run stable PC on ``d`` (or on ``tester.nodes`` when a tester is given)."""
    if cfg.algorithm != "pc":
        raise ValueError("pc() requires cfg.algorithm == 'pc'")
    if tester is None:
        tester = CITester(d, "dg_lrt")
    return pc_search(tester.nodes, tester, cfg.alpha, cfg.knowledge, cfg.max_condset).graph


class BICScorer:
    """Degenerate-Gaussian BIC: per-node Gaussian log-likelihood of the embedded block."""

    def __init__(self, d: Dataset, penalty_discount: float = 1.0):
        self.names = d.names
        self.n = d.n
        blocks = {}
        for name in d.names:
            b = embed(d, name)
            blocks[name] = (b - b.mean(axis=0)) / b.std(axis=0)
        self.blocks = blocks
        self.penalty = penalty_discount
        self._cache = {}

    def local(self, v, parents) -> float:
        key = (v, frozenset(parents))
        if key in self._cache:
            return self._cache[key]
        y = self.blocks[v]
        k = y.shape[1]
        n = self.n
        if parents:
            x = np.column_stack([self.blocks[p] for p in sorted(parents)])
            gram = x.T @ x
            gram[np.diag_indices_from(gram)] += 1e-10 * n
            coef = np.linalg.solve(gram, x.T @ y)
            resid = y - x @ coef
            dim_p = x.shape[1]
        else:
            resid = y
            dim_p = 0
        cov = resid.T @ resid / n
        cov[np.diag_indices_from(cov)] += 1e-10
        sign, logdet = np.linalg.slogdet(cov)
        ll = -0.5 * n * (logdet + k * (1.0 + np.log(2 * np.pi)))
        score = float(ll - self.penalty * 0.5 * np.log(n) * k * (dim_p + 1))
        self._cache[key] = score
        return score

    def score(self, g: CausalGraph) -> float:
        return sum(self.local(v, g.parents(v)) for v in g.nodes)


def _reachable(children, src, dst):
    stack, seen = [src], {src}
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        for c in children[v]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def greedy_bic_search(d: Dataset, knowledge=None, seed=0, penalty_discount=1.0, max_iter=10_000):
    """Hill climbing over DAGs with add / delete / reverse moves.

    Moves that break knowledge or acyclicity are skipped. The seed fixes the
    order in which moves are scanned, which decides exact score ties.
    Returns ``(graph, score)``.
    """
    knowledge = knowledge or BackgroundKnowledge()
    scorer = BICScorer(d, penalty_discount)
    nodes = d.names
    parents = {v: set() for v in nodes}
    children = {v: set() for v in nodes}
    for a, b in sorted(knowledge.required):
        if _reachable(children, b, a):
            raise DiscoveryError(f"required edge {a} -> {b} closes a cycle")
        parents[b].add(a)
        children[a].add(b)
    order = list(itertools.permutations(nodes, 2))
    rng = np.random.default_rng(seed)
    order = [order[i] for i in rng.permutation(len(order))]

    def local(v, ps):
        return scorer.local(v, ps)

    for _ in range(max_iter):
        best = None
        best_delta = 1e-9
        for a, b in order:
            if a in parents[b]:
                # delete a -> b
                if not knowledge.is_required(a, b):
                    delta = local(b, parents[b] - {a}) - local(b, parents[b])
                    if delta > best_delta:
                        best, best_delta = ("del", a, b), delta
                # reverse a -> b
                if not knowledge.is_required(a, b) and not knowledge.is_forbidden(b, a):
                    children[a].discard(b)
                    cyclic = _reachable(children, a, b)
                    children[a].add(b)
                    if not cyclic:
                        delta = (
                            local(b, parents[b] - {a})
                            + local(a, parents[a] | {b})
                            - local(b, parents[b])
                            - local(a, parents[a])
                        )
                        if delta > best_delta:
                            best, best_delta = ("rev", a, b), delta
            elif b not in parents[a]:
                if knowledge.is_forbidden(a, b) or _reachable(children, b, a):
                    continue
                delta = local(b, parents[b] | {a}) - local(b, parents[b])
                if delta > best_delta:
                    best, best_delta = ("add", a, b), delta
        if best is None:
            break
        op, a, b = best
        if op == "add":
            parents[b].add(a)
            children[a].add(b)
        elif op == "del":
            parents[b].discard(a)
            children[a].discard(b)
        else:
            parents[b].discard(a)
            children[a].discard(b)
            parents[a].add(b)
            children[b].add(a)
    g = CausalGraph(nodes, [(p, v) for v in nodes for p in sorted(parents[v], key=nodes.index)])
    return g, scorer.score(g)


def score_greedy(d: Dataset, cfg: DiscoveryConfig) -> CausalGraph:
    """Greedy BIC search, reported as the knowledge-narrowed equivalence class of the optimum.

    BIC cannot tell Markov-equivalent DAGs apart, so orientations beyond the
    class are tie-breaks of the scan order and are left undirected.
    """
    if cfg.algorithm != "score_greedy":
        raise ValueError("score_greedy() requires cfg.algorithm == 'score_greedy'")
    return dag_to_cpdag(greedy_bic_search(d, cfg.knowledge, cfg.seed)[0], cfg.knowledge)


def discover(d: Dataset, cfg: DiscoveryConfig, tester=None) -> CausalGraph:
    if cfg.algorithm == "pc":
        return pc(d, cfg, tester)
    return score_greedy(d, cfg)


class PCDiscovery(BaseEstimator):
    """Stable PC as an estimator: ``fit(dataset)`` sets ``graph_`` and ``sepsets_``.

    ``ci_test`` is ``"dg_lrt"``, ``"fisher_z"`` or a callable tester such as
    :class:`~effectgate.citest.DSeparationOracle` (then ``fit`` may get ``None``).
    """

    def __init__(self, alpha=0.05, ci_test="dg_lrt", knowledge=None, max_condset=None):
        self.alpha = alpha
        self.ci_test = ci_test
        self.knowledge = knowledge
        self.max_condset = max_condset

    def fit(self, X, y=None):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        tester = CITester(X, self.ci_test) if isinstance(self.ci_test, str) else self.ci_test
        res = pc_search(tester.nodes, tester, self.alpha, self.knowledge, self.max_condset)
        self.graph_ = res.graph
        self.sepsets_ = res.sepsets
        self.n_tests_ = res.n_tests
        return self


class GreedyBICDiscovery(BaseEstimator):
    """Greedy BIC hill climbing; ``fit(dataset)`` sets ``dag_``, ``score_`` and ``graph_`` (its equivalence class)."""

    def __init__(self, knowledge=None, random_state=0, penalty_discount=1.0):
        self.knowledge = knowledge
        self.random_state = random_state
        self.penalty_discount = penalty_discount

    def fit(self, X, y=None):
        self.dag_, self.score_ = greedy_bic_search(X, self.knowledge, self.random_state, self.penalty_discount)
        self.graph_ = dag_to_cpdag(self.dag_, self.knowledge)
        return self


__all__ = [
    "ALPHA_GRID",
    "DiscoveryConfig",
    "DiscoveryError",
    "GreedyBICDiscovery",
    "PCDiscovery",
    "dag_to_cpdag",
    "discover",
    "pc",
    "pc_search",
    "score_greedy",
    "greedy_bic_search",
    "BICScorer",
]
