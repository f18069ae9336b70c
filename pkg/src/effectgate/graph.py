"""Causal graphs (DAG / CPDAG), background knowledge and structural queries."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .exceptions import EffectGateError, NodeLookupError, NotDAGError

TAIL = "tail"
ARROW = "arrow"


class CausalGraph:
    """Immutable mixed graph with directed (``a -> b``) and undirected (``a -- b``) edges.

    Undirected pairs are stored in node order. ``kind`` is ``"DAG"`` when every
    edge is directed, ``"CPDAG"`` otherwise. Directed cycles are rejected.
    """

    def __init__(self, nodes: Iterable[str], directed=(), undirected=()):
        nodes = tuple(nodes)
        if len(set(nodes)) != len(nodes):
            raise EffectGateError(f"duplicate node names in {nodes}")
        self.nodes = nodes
        self._pos = {v: i for i, v in enumerate(nodes)}
        dset = set()
        uset = set()
        for a, b in directed:
            self._check(a), self._check(b)
            dset.add((a, b))
        for a, b in undirected:
            self._check(a), self._check(b)
            uset.add(self._ordered(a, b))
        pairs = [frozenset(e) for e in dset] + [frozenset(e) for e in uset]
        if any(len(p) == 1 for p in pairs):
            raise EffectGateError("self-loops are not allowed")
        if len(set(pairs)) != len(pairs):
            raise EffectGateError("at most one edge per unordered pair is allowed")
        self.directed = frozenset(dset)
        self.undirected = frozenset(uset)
        self._children = {v: set() for v in nodes}
        self._parents = {v: set() for v in nodes}
        self._neighbors = {v: set() for v in nodes}
        for a, b in dset:
            self._children[a].add(b)
            self._parents[b].add(a)
        for a, b in uset:
            self._neighbors[a].add(b)
            self._neighbors[b].add(a)
        if _has_directed_cycle(nodes, self._children):
            raise NotDAGError("directed part of the graph contains a cycle")

    def _check(self, v):
        if v not in self._pos:
            raise NodeLookupError(f"unknown node {v!r}")

    def _ordered(self, a, b):
        return (a, b) if self._pos[a] < self._pos[b] else (b, a)

    @property
    def kind(self):
        return "DAG" if not self.undirected else "CPDAG"

    @property
    def is_dag(self):
        return not self.undirected

    @property
    def edges(self):
        """Edges as ``(a, b, mark_a, mark_b)`` tuples in canonical order."""
        out = [(a, b, TAIL, ARROW) for a, b in self.directed]
        out += [(a, b, TAIL, TAIL) for a, b in self.undirected]
        return sorted(out, key=lambda e: (self._pos[e[0]], self._pos[e[1]]))

    def parents(self, v):
        self._check(v)
        return set(self._parents[v])

    def children(self, v):
        self._check(v)
        return set(self._children[v])

    def neighbors(self, v):
        """Nodes joined to ``v`` by an undirected edge."""
        self._check(v)
        return set(self._neighbors[v])

    def adjacent(self, v):
        self._check(v)
        return self._parents[v] | self._children[v] | self._neighbors[v]

    def is_adjacent(self, a, b):
        return b in self.adjacent(a)

    def skeleton(self):
        return {frozenset(e) for e in self.directed} | {frozenset(e) for e in self.undirected}

    def sort_key(self, v):
        return self._pos[v]

    def replace(self, directed=None, undirected=None) -> "CausalGraph":
        return CausalGraph(
            self.nodes,
            self.directed if directed is None else directed,
            self.undirected if undirected is None else undirected,
        )

    def __eq__(self, other):
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return (
            set(self.nodes) == set(other.nodes)
            and self.directed == other.directed
            and {frozenset(e) for e in self.undirected} == {frozenset(e) for e in other.undirected}
        )

    def __hash__(self):
        return hash((frozenset(self.nodes), self.directed, frozenset(frozenset(e) for e in self.undirected)))

    def __repr__(self):
        parts = [f"{a} -> {b}" if m == ARROW else f"{a} -- {b}" for a, b, _, m in self.edges]
        return f"CausalGraph({self.kind}: {', '.join(parts) or 'no edges'})"


def _has_directed_cycle(nodes, children):
    indeg = {v: 0 for v in nodes}
    for v in nodes:
        for c in children[v]:
            indeg[c] += 1
    queue = deque(v for v in nodes if indeg[v] == 0)
    seen = 0
    while queue:
        v = queue.popleft()
        seen += 1
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen != len(nodes)


def topological_order(g: CausalGraph) -> list[str]:
    """Kahn order over directed edges; ties broken by declaration order."""
    indeg = {v: len(g.parents(v)) for v in g.nodes}
    ready = sorted((v for v in g.nodes if indeg[v] == 0), key=g.sort_key)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in sorted(g.children(v), key=g.sort_key):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                ready.sort(key=g.sort_key)
    return order


def _require_dag(g):
    if not g.is_dag:
        raise NotDAGError("query requires a DAG but the graph has undirected edges")


def descendants(g: CausalGraph, x: str) -> set[str]:
    """Nodes reachable from ``x`` along directed edges, excluding ``x``."""
    g._check(x)
    seen = set()
    stack = [x]
    while stack:
        for c in g._children[stack.pop()]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    seen.discard(x)
    return seen


def ancestors(g: CausalGraph, x: str) -> set[str]:
    g._check(x)
    seen = set()
    stack = [x]
    while stack:
        for p in g._parents[stack.pop()]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    seen.discard(x)
    return seen


def d_separated(g: CausalGraph, x: str, y: str, z: Iterable[str] = ()) -> bool:
    """True iff ``z`` blocks every path between ``x`` and ``y`` in DAG ``g``.

    Uses the reachable-trail search: a trail may pass a non-collider outside
    ``z`` and a collider that is in ``z`` or has a descendant in ``z``.
    """
    _require_dag(g)
    z = set(z)
    for v in (x, y, *z):
        g._check(v)
    if x == y:
        raise ValueError("x and y must differ")
    if x in z or y in z:
        raise ValueError("x and y must not be in the conditioning set")

    # ancestors of z (inclusive) are the colliders that open a trail
    anc_z = set(z)
    stack = list(z)
    while stack:
        for p in g._parents[stack.pop()]:
            if p not in anc_z:
                anc_z.add(p)
                stack.append(p)

    # state: (node, arrived_via_edge_into_node)
    visited = set()
    queue = deque([(x, False)])
    while queue:
        v, into = queue.popleft()
        if (v, into) in visited:
            continue
        visited.add((v, into))
        if v == y:
            return False
        if not into:
            # arrived from a child (or at the start): v is a non-collider
            if v not in z:
                for p in g._parents[v]:
                    queue.append((p, False))
                for c in g._children[v]:
                    queue.append((c, True))
        else:
            # arrived along an edge pointing into v
            if v not in z:
                for c in g._children[v]:
                    queue.append((c, True))
            if v in anc_z:
                for p in g._parents[v]:
                    queue.append((p, False))
    return True


@dataclass(frozen=True)
class BackgroundKnowledge:
    """Forbidden and required directed edges tagged with a constraint level."""

    forbidden: frozenset = field(default_factory=frozenset)
    required: frozenset = field(default_factory=frozenset)
    level: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "forbidden", frozenset(tuple(e) for e in self.forbidden))
        object.__setattr__(self, "required", frozenset(tuple(e) for e in self.required))

    def is_forbidden(self, a, b):
        return (a, b) in self.forbidden

    def is_required(self, a, b):
        return (a, b) in self.required

    def violations(self) -> list[str]:
        """Internal conflicts: overlapping forbidden/required pairs and required cycles."""
        out = [f"edge {a} -> {b} is both required and forbidden" for a, b in sorted(self.forbidden & self.required)]
        cycle = _find_cycle(self.required)
        if cycle:
            out.append("required edges form a directed cycle: " + " -> ".join(cycle))
        return out

    def to_dict(self):
        return {
            "level": self.level,
            "forbidden": [list(e) for e in sorted(self.forbidden)],
            "required": [list(e) for e in sorted(self.required)],
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            frozenset(tuple(e) for e in obj.get("forbidden", ())),
            frozenset(tuple(e) for e in obj.get("required", ())),
            obj.get("level"),
        )


def _find_cycle(edges):
    children = {}
    for a, b in sorted(edges):
        children.setdefault(a, []).append(b)
    color = {}

    def visit(v, path):
        color[v] = 1
        path.append(v)
        for c in children.get(v, ()):
            if color.get(c) == 1:
                return path[path.index(c):] + [c]
            if color.get(c) is None:
                found = visit(c, path)
                if found:
                    return found
        color[v] = 2
        path.pop()
        return None

    for v in sorted(children):
        if color.get(v) is None:
            found = visit(v, [])
            if found:
                return found
    return None


CONSTRAINT_LEVELS = ("C0", "C1", "C2", "C3")


def constraint_level(
    level: str,
    nodes: Iterable[str],
    outcome: str = "R1",
    platform: str = "Web3",
    treatment: str = "PvP",
    onboarding: str = "Time_Play_Level1",
    progression: str = "Total_PvE_Battle",
    session: str = "Total_Session",
) -> BackgroundKnowledge:
    """Nested domain constraint sets C0 ⊂ C1 ⊂ C2 ⊂ C3.

    C0 forbids every edge out of the outcome. C1 also forbids every edge into
    the platform flag. C2 also requires progression -> session. C3 also
    forbids treatment -> onboarding time.
    """
    if level not in CONSTRAINT_LEVELS:
        raise ValueError(f"unknown constraint level {level!r}")
    nodes = list(nodes)
    rank = CONSTRAINT_LEVELS.index(level)
    forbidden = {(outcome, v) for v in nodes if v != outcome}
    required = set()
    if rank >= 1 and platform in nodes:
        forbidden |= {(v, platform) for v in nodes if v != platform}
    if rank >= 2 and progression in nodes and session in nodes:
        required.add((progression, session))
    if rank >= 3 and treatment in nodes and onboarding in nodes:
        forbidden.add((treatment, onboarding))
    return BackgroundKnowledge(frozenset(forbidden), frozenset(required), level)


class KnowledgeViolation(EffectGateError):
    """Background knowledge cannot be satisfied on the given graph."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _creates_cycle(children, a, b):
    # adding a -> b closes a cycle iff a is reachable from b
    stack, seen = [b], {b}
    while stack:
        v = stack.pop()
        if v == a:
            return True
        for c in children.get(v, ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def apply_knowledge(g: CausalGraph, k: BackgroundKnowledge) -> CausalGraph:
    """Enforce ``k`` on ``g``.

    Required edges are inserted or oriented first. A forbidden orientation is
    then reversed when the reverse is allowed and acyclic, otherwise the edge
    is removed. Undirected edges with one forbidden direction get the other.
    Raises :class:`KnowledgeViolation` listing every unsatisfiable constraint.
    """
    violations = k.violations()
    for a, b in sorted(k.forbidden | k.required):
        for v in (a, b):
            if v not in g._pos:
                violations.append(f"knowledge names unknown node {v!r}")
    if violations:
        raise KnowledgeViolation(sorted(set(violations)))

    directed = set(g.directed)
    undirected = {frozenset(e) for e in g.undirected}
    for a, b in sorted(k.required, key=lambda e: (g.sort_key(e[0]), g.sort_key(e[1]))):
        directed.discard((b, a))
        undirected.discard(frozenset((a, b)))
        directed.add((a, b))
    children = {}
    for a, b in directed:
        children.setdefault(a, set()).add(b)
    for a, b in sorted(k.required):
        children[a].discard(b)
        if _creates_cycle(children, a, b):
            violations.append(f"required edge {a} -> {b} closes a directed cycle with the graph's edges")
        children[a].add(b)
    if violations:
        raise KnowledgeViolation(violations)

    for a, b in sorted(directed, key=lambda e: (g.sort_key(e[0]), g.sort_key(e[1]))):
        if not k.is_forbidden(a, b):
            continue
        directed.discard((a, b))
        children[a].discard(b)
        if not k.is_forbidden(b, a) and not _creates_cycle(children, b, a):
            directed.add((b, a))
            children.setdefault(b, set()).add(a)
    for pair in sorted(undirected, key=lambda p: sorted(g.sort_key(v) for v in p)):
        a, b = sorted(pair, key=g.sort_key)
        fa, fb = k.is_forbidden(a, b), k.is_forbidden(b, a)
        if fa and fb:
            undirected.discard(pair)
        elif fa or fb:
            src, dst = (b, a) if fa else (a, b)
            undirected.discard(pair)
            if not _creates_cycle(children, src, dst):
                directed.add((src, dst))
                children.setdefault(src, set()).add(dst)
    return CausalGraph(g.nodes, directed, [tuple(p) for p in undirected])


def satisfies_knowledge(g: CausalGraph, k: BackgroundKnowledge) -> bool:
    if any(e in g.directed for e in k.forbidden):
        return False
    return all(e in g.directed for e in k.required)


@dataclass(frozen=True)
class GraphMetrics:
    arrow_precision: float
    arrow_recall: float
    arrow_tp: int
    arrow_fp: int
    arrow_fn: int
    adj_precision: float
    adj_recall: float
    adj_tp: int
    adj_fp: int
    adj_fn: int
    shd: int

    def to_dict(self):
        return dict(self.__dict__)


def _ratio(num, den):
    return num / den if den else 0.0


def graph_metrics(g: CausalGraph, baseline: CausalGraph) -> GraphMetrics:
    """Adjacency / arrowhead precision-recall and SHD of ``g`` against ``baseline``.

    SHD counts one per pair that must be inserted, deleted or re-marked; an
    undirected edge facing a directed baseline edge costs one and is an
    arrow false negative.
    """
    if set(g.nodes) != set(baseline.nodes):
        raise EffectGateError("graph_metrics requires identical node sets")
    skel_g, skel_b = g.skeleton(), baseline.skeleton()
    adj_tp = len(skel_g & skel_b)
    adj_fp = len(skel_g - skel_b)
    adj_fn = len(skel_b - skel_g)
    arrow_tp = len(g.directed & baseline.directed)
    arrow_fp = len(g.directed - baseline.directed)
    arrow_fn = len(baseline.directed - g.directed)
    shd = adj_fp + adj_fn
    for pair in skel_g & skel_b:
        a, b = tuple(pair)
        if _mark(g, a, b) != _mark(baseline, a, b):
            shd += 1
    return GraphMetrics(
        arrow_precision=_ratio(arrow_tp, arrow_tp + arrow_fp),
        arrow_recall=_ratio(arrow_tp, arrow_tp + arrow_fn),
        arrow_tp=arrow_tp,
        arrow_fp=arrow_fp,
        arrow_fn=arrow_fn,
        adj_precision=_ratio(adj_tp, adj_tp + adj_fp),
        adj_recall=_ratio(adj_tp, adj_tp + adj_fn),
        adj_tp=adj_tp,
        adj_fp=adj_fp,
        adj_fn=adj_fn,
        shd=shd,
    )


def _mark(g, a, b):
    if (a, b) in g.directed:
        return "->"
    if (b, a) in g.directed:
        return "<-"
    return "--"


def to_edgelist(g: CausalGraph, header: Iterable[str] = ()) -> str:
    """Serialize as comment lines, one node per line, then one edge per line."""
    lines = [f"# {h}" for h in header]
    lines += list(g.nodes)
    for a, b, _, mark in g.edges:
        lines.append(f"{a} -> {b}" if mark == ARROW else f"{a} -- {b}")
    return "\n".join(lines) + "\n"


def from_edgelist(text: str) -> CausalGraph:
    nodes, directed, undirected = [], [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " -> " in line:
            a, b = (s.strip() for s in line.split(" -> ", 1))
            directed.append((a, b))
        elif " -- " in line:
            a, b = (s.strip() for s in line.split(" -- ", 1))
            undirected.append((a, b))
        else:
            if directed or undirected:
                raise EffectGateError(f"node declaration {line!r} after edges")
            nodes.append(line)
    return CausalGraph(nodes, directed, undirected)


def edgelist_header(text: str) -> list[str]:
    return [ln[2:] if ln.startswith("# ") else ln[1:] for ln in text.splitlines() if ln.startswith("#")]


def complete_undirected(nodes: Iterable[str]) -> CausalGraph:
    nodes = list(nodes)
    return CausalGraph(nodes, (), itertools.combinations(nodes, 2))
