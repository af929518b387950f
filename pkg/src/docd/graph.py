"""Immutable simple undirected graphs and the edge-list text format."""

from __future__ import annotations

import io
import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np

from docd import _kernels

_SPLIT = re.compile(r"\s*,\s*|\s+")


class GraphError(ValueError):
    """Raised for structurally invalid graph input."""


class GraphParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnknownVertexError(GraphError):
    pass


@dataclass(frozen=True)
class Graph:
    vertices: tuple[int, ...]
    adjacency: dict[int, tuple[int, ...]]
    edge_count: int
    label_map: dict[str, int] | None = field(default=None, compare=False)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], vertices: Iterable[int] = (),
                   label_map: dict[str, int] | None = None) -> "Graph":
        adj: dict[int, set[int]] = {int(v): set() for v in vertices}
        for u, v in edges:
            u, v = int(u), int(v)
            if u < 0 or v < 0:
                raise GraphError(f"negative vertex id in edge ({u}, {v})")
            if u == v:
                raise GraphError(f"self-loop on vertex {u}")
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
        order = tuple(sorted(adj))
        frozen = {v: tuple(sorted(adj[v])) for v in order}
        m = sum(len(ns) for ns in frozen.values()) // 2
        return cls(order, frozen, m, label_map)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return self.edge_count

    def __contains__(self, v: object) -> bool:
        return v in self.adjacency

    def degree(self, v: int) -> int:
        return len(neighbors(self, v))

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in self.vertices for v in self.adjacency[u] if u < v]

    @cached_property
    def index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) over positional indices, neighbors sorted."""
        idx = self.index
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        for i, v in enumerate(self.vertices):
            indptr[i + 1] = indptr[i] + len(self.adjacency[v])
        indices = np.fromiter(
            (idx[u] for v in self.vertices for u in self.adjacency[v]),
            dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    @cached_property
    def _nbr_sets(self) -> dict[int, frozenset[int]]:
        return {v: frozenset(ns) for v, ns in self.adjacency.items()}

    def neighbor_set(self, v: int) -> frozenset[int]:
        try:
            return self._nbr_sets[v]
        except KeyError:
            raise UnknownVertexError(f"unknown vertex {v}") from None


def neighbors(g: Graph, v: int) -> tuple[int, ...]:
    try:
        return g.adjacency[v]
    except KeyError:
        raise UnknownVertexError(f"unknown vertex {v}") from None


def links_among(g: Graph, s: Iterable[int]) -> int:
    """Number of edges with both endpoints in s."""
    s = set(s)
    count = 0
    for u in s:
        for w in g.adjacency.get(u, ()):
            if w > u and w in s:
                count += 1
    return count


def eccentricities(g: Graph) -> dict[int, float]:
    if g.n == 0:
        return {}
    indptr, indices = g.csr
    ecc = _kernels.eccentricities(indptr, indices)
    return {v: (math.inf if e < 0 else int(e)) for v, e in zip(g.vertices, ecc.tolist())}


def diameter(g: Graph) -> float:
    """Longest shortest path; math.inf when g is disconnected, 0 for n <= 1."""
    ecc = eccentricities(g)
    return max(ecc.values(), default=0)


def components(g: Graph) -> list[list[int]]:
    seen: set[int] = set()
    out = []
    for s in g.vertices:
        if s in seen:
            continue
        comp, stack = [], [s]
        seen.add(s)
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in g.adjacency[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        out.append(sorted(comp))
    return out


def _finite_component_diameter(g: Graph) -> int:
    # BFS eccentricity is -1 whenever any vertex is unreachable, so fall back
    # to per-component subgraphs for disconnected input.
    best = 0
    for comp in components(g):
        if len(comp) < 2:
            continue
        sub = Graph.from_edges(((u, v) for u in comp for v in g.adjacency[u] if u < v), comp)
        best = max(best, int(diameter(sub)))
    return best


def max_component_diameter(g: Graph) -> int:
    d = diameter(g)
    if d != math.inf:
        return int(d)
    return _finite_component_diameter(g)


def is_connected(g: Graph) -> bool:
    return len(components(g)) <= 1


def parse_edge_list(text: str, *, relabel: bool = False, skip_self_loops: bool = False) -> Graph:
    edges: list[tuple[int, int]] = []
    label_map: dict[str, int] = {}

    def ident(tok: str, lineno: int) -> int:
        if relabel:
            if tok not in label_map:
                label_map[tok] = len(label_map)
            return label_map[tok]
        if not tok.isdigit():
            raise GraphParseError(lineno, f"vertex label {tok!r} is not a non-negative integer "
                                          "(use relabel for string labels)")
        return int(tok)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = _SPLIT.split(line)
        if len(toks) != 2 or not all(toks):
            raise GraphParseError(lineno, f"expected 2 endpoint tokens, got {len(toks)}: {raw.strip()!r}")
        u, v = ident(toks[0], lineno), ident(toks[1], lineno)
        if u == v:
            if skip_self_loops:
                continue
            raise GraphParseError(lineno, f"self-loop on {toks[0]!r}")
        edges.append((u, v))
    return Graph.from_edges(edges, label_map=label_map if relabel else None)


def load_edge_list(source: TextIO | str | os.PathLike, *, relabel: bool = False,
                   skip_self_loops: bool = False) -> Graph:
    """Read an edge list from an open text stream or a path."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    return parse_edge_list(text, relabel=relabel, skip_self_loops=skip_self_loops)


def serialize(g: Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in g.edges())


def to_stream(g: Graph) -> io.StringIO:
    return io.StringIO(serialize(g))
