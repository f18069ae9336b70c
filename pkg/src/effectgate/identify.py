"""Admissibility gate: backdoor validity, minimal adjustment sets, verdicts."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .exceptions import NotDAGError
from .graph import CausalGraph, d_separated, descendants

FAILURE_REASONS = ("none", "not_dag", "no_valid_adjustment", "unresolved_adjacency", "positivity_violation")
EXTENSION_BUDGET = 12


@dataclass(frozen=True)
class AdmissibilityVerdict:
    identifiable: bool
    adjustment_set: tuple | None = None
    graph_class_ok: bool = True
    failure_reason: str = "none"
    detail: str = ""
    alternative_sets: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        if self.identifiable and (self.adjustment_set is None or self.failure_reason != "none"):
            raise ValueError("identifiable verdict needs an adjustment set and no failure reason")
        if not self.identifiable and self.adjustment_set is not None:
            raise ValueError("non-identifiable verdict cannot carry an adjustment set")

    def fail(self, reason, detail="") -> "AdmissibilityVerdict":
        return replace(self, identifiable=False, adjustment_set=None, failure_reason=reason, detail=detail)

    def to_dict(self):
        return {
            "identifiable": self.identifiable,
            "adjustment_set": None if self.adjustment_set is None else list(self.adjustment_set),
            "graph_class_ok": self.graph_class_ok,
            "failure_reason": self.failure_reason,
            "detail": self.detail,
            "alternative_sets": [list(s) for s in self.alternative_sets],
        }


def _without_outgoing(g: CausalGraph, t) -> CausalGraph:
    return g.replace(directed=[e for e in g.directed if e[0] != t])


def backdoor_valid(g: CausalGraph, t: str, y: str, w) -> bool:
    """Backdoor criterion: ``w`` has no descendant of ``t`` and d-separates
    ``t`` from ``y`` once the edges out of ``t`` are removed."""
    if not g.is_dag:
        raise NotDAGError("backdoor_valid requires a DAG")
    w = set(w)
    if t == y or t in w or y in w:
        raise ValueError("t, y must differ and lie outside w")
    if w & descendants(g, t):
        return False
    return d_separated(_without_outgoing(g, t), t, y, w)


def adjustment_candidates(g: CausalGraph, t, y):
    return sorted(set(g.nodes) - {t, y} - descendants(g, t))


def valid_adjustment_sets(g: CausalGraph, t, y, max_size=None):
    """All valid backdoor sets up to ``max_size``, by size then lexicographically."""
    cands = adjustment_candidates(g, t, y)
    top = len(cands) if max_size is None else min(max_size, len(cands))
    pruned = _without_outgoing(g, t)
    out = []
    for k in range(top + 1):
        for combo in itertools.combinations(cands, k):
            if d_separated(pruned, t, y, combo):
                out.append(combo)
    return out


def minimal_adjustment(g: CausalGraph, t: str, y: str):
    """Smallest valid backdoor set (lexicographic tie-break) as a sorted tuple, or None."""
    if not g.is_dag:
        raise NotDAGError("minimal_adjustment requires a DAG")
    g._check(t), g._check(y)
    cands = adjustment_candidates(g, t, y)
    pruned = _without_outgoing(g, t)
    for k in range(len(cands) + 1):
        for combo in itertools.combinations(cands, k):
            if d_separated(pruned, t, y, combo):
                return combo
    return None


def _v_structures(nodes, directed, adjacent):
    out = set()
    parents = {v: [] for v in nodes}
    for a, b in directed:
        parents[b].append(a)
    for c in nodes:
        for a, b in itertools.combinations(sorted(parents[c]), 2):
            if frozenset((a, b)) not in adjacent:
                out.add((a, c, b))
    return out


def consistent_extensions(g: CausalGraph, budget=EXTENSION_BUDGET):
    """Yield every DAG extending ``g`` without adding or removing v-structures.

    Returns None (instead of a generator) when ``g`` has more undirected edges
    than ``budget``.
    """
    und = sorted(g.undirected, key=lambda e: (g.sort_key(e[0]), g.sort_key(e[1])))
    if len(und) > budget:
        return None
    adjacent = g.skeleton()
    base_vs = _v_structures(g.nodes, g.directed, adjacent)

    def gen():
        for bits in itertools.product((0, 1), repeat=len(und)):
            directed = set(g.directed)
            for (a, b), flip in zip(und, bits):
                directed.add((b, a) if flip else (a, b))
            if _v_structures(g.nodes, directed, adjacent) != base_vs:
                continue
            try:
                yield CausalGraph(g.nodes, directed)
            except NotDAGError:
                continue

    return gen()


def gate(g: CausalGraph, t: str, y: str) -> AdmissibilityVerdict:
    """Graphical admissibility verdict for the effect of ``t`` on ``y``.

    A DAG passes when some backdoor set exists. A CPDAG passes only when all
    of its consistent DAG extensions agree on the minimal adjustment set.
    """
    g._check(t), g._check(y)
    if g.is_dag:
        ms = minimal_adjustment(g, t, y)
        if ms is None:
            return AdmissibilityVerdict(False, failure_reason="no_valid_adjustment", detail="no backdoor set exists")
        alts = valid_adjustment_sets(g, t, y, len(ms) + 1)
        return AdmissibilityVerdict(True, ms, alternative_sets=tuple(alts))

    exts = consistent_extensions(g)
    if exts is None:
        return AdmissibilityVerdict(
            False,
            failure_reason="unresolved_adjacency",
            detail=f"{len(g.undirected)} undirected edges exceed the extension budget of {EXTENSION_BUDGET}",
        )
    sets = set()
    count = 0
    for dag in exts:
        count += 1
        sets.add(minimal_adjustment(dag, t, y))
        if len(sets) > 1:
            break
    if count == 0:
        return AdmissibilityVerdict(
            False, graph_class_ok=False, failure_reason="not_dag", detail="graph has no consistent DAG extension"
        )
    if len(sets) > 1:
        return AdmissibilityVerdict(
            False,
            failure_reason="unresolved_adjacency",
            detail="consistent extensions disagree on the minimal adjustment set",
        )
    ms = sets.pop()
    if ms is None:
        return AdmissibilityVerdict(False, failure_reason="no_valid_adjustment", detail="no extension admits a backdoor set")
    return AdmissibilityVerdict(True, ms, detail=f"all {count} consistent extensions agree")


def has_causal_path(g: CausalGraph, t: str, y: str) -> bool:
    """True if some directed or undirected-forward path leads from ``t`` to ``y``.

    On a CPDAG this is a possibly-causal path: when it is absent, no
    consistent extension lets ``t`` affect ``y``.
    """
    g._check(t), g._check(y)
    seen, stack = {t}, [t]
    while stack:
        v = stack.pop()
        for w in g.children(v) | g.neighbors(v):
            if w == y:
                return True
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False
