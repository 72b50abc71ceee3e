"""Sequence variables, the causal DAG and the sequence-driven SCM object."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping

from .errors import CycleError, UnknownNodeError
from .scorers import Scorer

PLACEHOLDER = "{x}"
SENTENCE_END = (".", "!", "?", '."', '!"', '?"', ".)", "!)", "?)")


class Kind(str, Enum):
    EXOGENOUS = "exogenous"
    ENDOGENOUS = "endogenous"


@dataclass(frozen=True)
class SequenceVariable:
    """A named finite space of phrases rendered from one template."""

    name: str
    kind: Kind
    template: str
    values: tuple[str, ...]

    @cached_property
    def space(self) -> tuple[str, ...]:
        return tuple(self.render(k) for k in range(len(self.values)))

    @property
    def card(self) -> int:
        return len(self.values)

    def render(self, index: int) -> str:
        return self.template.replace(PLACEHOLDER, self.values[index])

    def problems(self) -> list[str]:
        out = []
        n_ph = self.template.count(PLACEHOLDER)
        if n_ph != 1:
            out.append(f"variable {self.name!r}: template must contain {PLACEHOLDER} exactly once (found {n_ph})")
        if not self.values:
            out.append(f"variable {self.name!r}: needs at least one fill value")
        if len(set(self.values)) != len(self.values):
            out.append(f"variable {self.name!r}: fill values are not distinct")
        elif n_ph == 1 and len(set(self.space)) != len(self.space):
            out.append(f"variable {self.name!r}: rendered phrases are not distinct")
        return out


@dataclass(frozen=True)
class CausalGraph:
    """Directed graph over variable names; ``nodes`` keeps declaration order."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> "CausalGraph":
        return cls(tuple(nodes), tuple((a, b) for a, b in edges))

    @cached_property
    def _rank(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def _children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            if a in out and b in out and b not in out[a]:
                out[a].append(b)
        return out

    @cached_property
    def _parents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            if a in out and b in out and a not in out[b]:
                out[b].append(a)
        for lst in out.values():
            lst.sort(key=self._rank.__getitem__)
        return out

    def _check(self, node: str) -> None:
        if node not in self._rank:
            raise UnknownNodeError(f"unknown node {node!r}")

    def parents(self, node: str) -> list[str]:
        self._check(node)
        return list(self._parents[node])

    def children(self, node: str) -> list[str]:
        self._check(node)
        return list(self._children[node])

    def descendants(self, node: str) -> set[str]:
        self._check(node)
        seen: set[str] = set()
        stack = list(self._children[node])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self._children[n])
        seen.discard(node)
        return seen

    def non_descendants(self, node: str) -> set[str]:
        return set(self.nodes) - self.descendants(node) - {node}

    def problems(self) -> list[str]:
        out = []
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            out.append("duplicate node names")
        seen = set()
        for a, b in self.edges:
            for end in (a, b):
                if end not in known:
                    out.append(f"edge {a}->{b}: endpoint {end!r} is not a declared node")
            if a == b:
                out.append(f"self-loop on {a!r}")
            if (a, b) in seen:
                out.append(f"duplicate edge {a}->{b}")
            seen.add((a, b))
        try:
            topological_order(self)
        except CycleError as exc:
            out.append(str(exc))
        return out


def topological_order(graph: CausalGraph) -> tuple[str, ...]:
    """Kahn's algorithm, ties broken by declaration order."""
    rank = graph._rank
    indeg = {n: 0 for n in graph.nodes}
    for child, parents in graph._parents.items():
        indeg[child] = len(parents)
    # self-loops are dropped by _parents; count them so they surface as cycles
    for a, b in graph.edges:
        if a == b and a in indeg:
            indeg[a] += 1
    heap = [rank[n] for n in graph.nodes if indeg[n] == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        n = graph.nodes[heapq.heappop(heap)]
        order.append(n)
        for c in graph._children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, rank[c])
    if len(order) != len(graph.nodes):
        raise CycleError(_cyclic_components(graph, set(graph.nodes) - set(order)))
    return tuple(order)


def _cyclic_components(graph: CausalGraph, remaining: set[str]) -> list[list[str]]:
    reach: dict[str, set[str]] = {}
    for n in remaining:
        seen: set[str] = set()
        stack = [c for c in graph._children[n] if c in remaining]
        while stack:
            m = stack.pop()
            if m not in seen:
                seen.add(m)
                stack.extend(c for c in graph._children[m] if c in remaining)
        reach[n] = seen
    self_loops = {a for a, b in graph.edges if a == b}
    comps: list[list[str]] = []
    done: set[str] = set()
    for n in graph.nodes:
        if n not in remaining or n in done:
            continue
        comp = [m for m in graph.nodes if m in remaining and (m == n or (m in reach[n] and n in reach[m]))]
        done.update(comp)
        if len(comp) > 1 or n in reach[n] or n in self_loops:
            comps.append(comp)
    return comps


def non_descendants(graph: CausalGraph, node: str) -> set[str]:
    return graph.non_descendants(node)


@dataclass(frozen=True)
class SdScm:
    """Variables, DAG, scorer binding and topological order.

    ``variation`` records which phrasing was chosen per variable (declaration
    order); ``seed`` is the master seed all per-unit streams derive from.
    """

    name: str
    graph: CausalGraph
    variables: Mapping[str, SequenceVariable]
    scorer: Scorer
    order: tuple[str, ...]
    variation: tuple[int, ...] = ()
    seed: int = 0
    treatment: str | None = None
    outcome: str | None = None
    meta: Mapping = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, name, variables: Iterable[SequenceVariable], edges, scorer, **kw) -> "SdScm":
        variables = list(variables)
        graph = CausalGraph.from_edges([v.name for v in variables], edges)
        return cls(name, graph, {v.name: v for v in variables}, scorer, topological_order(graph), **kw)

    @cached_property
    def position(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.order)}

    @cached_property
    def parent_positions(self) -> tuple[tuple[int, ...], ...]:
        pos = self.position
        return tuple(tuple(sorted(pos[p] for p in self.graph._parents[n])) for n in self.order)

    @cached_property
    def spaces(self) -> tuple[tuple[str, ...], ...]:
        return tuple(self.variables[n].space for n in self.order)

    @cached_property
    def cards(self) -> tuple[int, ...]:
        return tuple(self.variables[n].card for n in self.order)

    def kind(self, name: str) -> Kind:
        return self.variables[name].kind

    @cached_property
    def exogenous(self) -> tuple[str, ...]:
        return tuple(n for n in self.order if self.variables[n].kind is Kind.EXOGENOUS)

    def with_scorer(self, scorer: Scorer) -> "SdScm":
        return SdScm(self.name, self.graph, self.variables, scorer, self.order, self.variation,
                     self.seed, self.treatment, self.outcome, self.meta)


def validate(scm: SdScm) -> list[str]:
    """Return every invariant violation; an empty list means the model is valid."""
    report: list[str] = []
    report.extend(scm.graph.problems())
    nodes = set(scm.graph.nodes)
    for n in scm.graph.nodes:
        if n not in scm.variables:
            report.append(f"graph node {n!r} has no variable definition")
    for n, var in scm.variables.items():
        if n not in nodes:
            report.append(f"variable {n!r} is not a graph node")
        if var.name != n:
            report.append(f"variable keyed {n!r} is named {var.name!r}")
        report.extend(var.problems())
    for a, b in scm.graph.edges:
        va, vb = scm.variables.get(a), scm.variables.get(b)
        if va and vb and va.kind is Kind.ENDOGENOUS and vb.kind is Kind.EXOGENOUS:
            report.append(f"edge {a}->{b}: endogenous variable into exogenous variable")
    if sorted(scm.order) != sorted(scm.graph.nodes) or len(set(scm.order)) != len(scm.order):
        report.append("order is not a permutation of the graph nodes")
    else:
        pos = {n: i for i, n in enumerate(scm.order)}
        for a, b in scm.graph.edges:
            if a in pos and b in pos and a != b and pos[a] >= pos[b]:
                report.append(f"order places {b!r} before its parent {a!r}")
    return report
