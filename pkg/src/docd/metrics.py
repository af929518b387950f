"""Cluster coefficient, node/community modularity and the movement benefits.

Every value is an exact ``Fraction``; callers convert to float for output.
A vertex of degree <= 1 scores 0 on CC, NM and ONM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Container, Iterable, Mapping

import numpy as np

from docd import _kernels
from docd.graph import Graph, UnknownVertexError, neighbors

ZERO = Fraction(0)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class CommunityAssignment:
    membership: dict[int, frozenset[int]]
    communities: dict[int, frozenset[int]]

    @classmethod
    def from_communities(cls, communities: Mapping[int, Iterable[int]]) -> "CommunityAssignment":
        comms = {int(c): frozenset(int(v) for v in ms) for c, ms in communities.items()}
        memb: dict[int, set[int]] = {}
        for c, ms in comms.items():
            for v in ms:
                memb.setdefault(v, set()).add(c)
        return cls({v: frozenset(cs) for v, cs in sorted(memb.items())}, dict(sorted(comms.items())))

    @classmethod
    def from_membership(cls, membership: Mapping[int, Iterable[int]]) -> "CommunityAssignment":
        comms: dict[int, set[int]] = {}
        for v, cs in membership.items():
            for c in cs:
                comms.setdefault(int(c), set()).add(int(v))
        return cls.from_communities(comms)

    def of(self, v: int) -> frozenset[int]:
        return self.membership.get(v, frozenset())

    def members(self, c: int) -> frozenset[int]:
        try:
            return self.communities[c]
        except KeyError:
            raise MetricsError(f"unknown community {c}") from None

    def overlapped(self) -> list[int]:
        return sorted(v for v, cs in self.membership.items() if len(cs) >= 2)

    def validate(self, g: Graph, *, cover: bool = False) -> None:
        for c, ms in self.communities.items():
            if not ms:
                raise MetricsError(f"community {c} is empty")
            for v in ms:
                if v not in g:
                    raise UnknownVertexError(f"community {c} references unknown vertex {v}")
        if cover:
            missing = [v for v in g.vertices if not self.membership.get(v)]
            if missing:
                raise MetricsError(f"vertices without a community: {missing[:10]}")


def ratio(mu: int, degree: int) -> Fraction:
    """2·mu / (δ(δ−1)), 0 when δ <= 1."""
    if degree <= 1:
        return ZERO
    return Fraction(2 * mu, degree * (degree - 1))


def neighbor_edges(g: Graph, v: int) -> list[tuple[int, int]]:
    """Edges {a, b} (a < b) with both endpoints adjacent to v."""
    ns = g.neighbor_set(v)
    return [(a, b) for a in neighbors(g, v) for b in g.adjacency[a] if b > a and b in ns]


def local_ratio(degree: int, edges: Iterable[tuple[int, int]],
                inside: Container[int] | Callable[[int], bool] | None = None) -> Fraction:
    """Ratio over a local view: count neighbor edges whose endpoints are both inside.

    This is the form protocol nodes use; they hold their two-hop edges and a
    membership view of their neighbors, never the global graph.
    """
    if degree <= 1:
        return ZERO
    if inside is None:
        mu = sum(1 for _ in edges)
    elif callable(inside):
        mu = sum(1 for a, b in edges if inside(a) and inside(b))
    else:
        mu = sum(1 for a, b in edges if a in inside and b in inside)
    return ratio(mu, degree)


def cluster_coefficient(g: Graph, v: int) -> Fraction:
    return local_ratio(g.degree(v), neighbor_edges(g, v))


def set_modularity(g: Graph, v: int, members: Container[int]) -> Fraction:
    """NM of v with respect to an arbitrary vertex set (used for as-if values)."""
    return local_ratio(g.degree(v), neighbor_edges(g, v), members)


def node_modularity(g: Graph, v: int, a: CommunityAssignment, c: int) -> Fraction:
    return set_modularity(g, v, a.members(c))


def overlapped_node_modularity(g: Graph, v: int, a: CommunityAssignment) -> Fraction:
    comms = a.of(v)
    union: set[int] = set()
    for c in comms:
        union |= a.members(c)
    return set_modularity(g, v, union)


def community_modularity(g: Graph, a: CommunityAssignment, c: int) -> Fraction:
    ms = a.members(c)
    if not ms:
        raise MetricsError(f"community {c} is empty")
    return sum((set_modularity(g, v, ms) for v in ms), ZERO) / len(ms)


def overall_modularity(g: Graph, a: CommunityAssignment) -> Fraction:
    if not a.communities:
        raise MetricsError("assignment has no communities")
    return sum((community_modularity(g, a, c) for c in a.communities), ZERO) / len(a.communities)


def modularity_without(cm, l: int, nm_u):
    """CM after excluding one member whose NM is nm_u."""
    if l <= 1:
        raise MetricsError("cannot exclude the sole member of a community")
    return (cm * l - nm_u) / (l - 1)


def modularity_with(cm, l: int, nm_u):
    """CM after including a vertex whose as-if NM is nm_u."""
    if l < 1:
        raise MetricsError("community size must be at least 1")
    return (cm * l + nm_u) / (l + 1)


def benefit_exclude(cm, l: int, nm_u):
    return modularity_without(cm, l, nm_u) - cm


def benefit_include(cm, l: int, nm_u):
    return modularity_with(cm, l, nm_u) - cm


# vectorized tables -----------------------------------------------------------

@dataclass
class MetricsTable:
    cc: dict[int, Fraction] = field(default_factory=dict)
    nm: dict[tuple[int, int], Fraction] = field(default_factory=dict)
    onm: dict[int, Fraction] = field(default_factory=dict)
    cm: dict[int, Fraction] = field(default_factory=dict)
    overall: Fraction | None = None

    def as_json(self) -> dict:
        return {
            "cc": {str(v): float(x) for v, x in self.cc.items()},
            "nm": {f"{v}:{c}": float(x) for (v, c), x in self.nm.items()},
            "onm": {str(v): float(x) for v, x in self.onm.items()},
            "cm": {str(c): float(x) for c, x in self.cm.items()},
            "overall": None if self.overall is None else float(self.overall),
        }


def _degrees(g: Graph) -> np.ndarray:
    indptr, _ = g.csr
    return np.diff(indptr)


def clustering_coefficients(g: Graph) -> dict[int, Fraction]:
    indptr, indices = g.csr
    mu = _kernels.masked_link_counts(indptr, indices, np.ones(g.n, dtype=bool), np.arange(g.n))
    deg = _degrees(g)
    return {v: ratio(int(mu[i]), int(deg[i])) for i, v in enumerate(g.vertices)}


def metrics_table(g: Graph, a: CommunityAssignment) -> MetricsTable:
    """All metric values for an assignment, computed through the array kernels."""
    a.validate(g)
    indptr, indices = g.csr
    idx = g.index
    deg = _degrees(g)
    table = MetricsTable(cc=clustering_coefficients(g))
    cids = list(a.communities)
    mem = np.zeros((g.n, len(cids)), dtype=bool)
    for k, c in enumerate(cids):
        rows = np.array(sorted(idx[v] for v in a.communities[c]), dtype=np.int64)
        mem[rows, k] = True
        mu = _kernels.masked_link_counts(indptr, indices, mem[:, k], rows)
        total = ZERO
        for r, count in zip(rows.tolist(), mu.tolist()):
            x = ratio(int(count), int(deg[r]))
            table.nm[(g.vertices[r], c)] = x
            total += x
        table.cm[c] = total / len(rows)
    mu_u = _kernels.union_link_counts(indptr, indices, mem)
    for i, v in enumerate(g.vertices):
        if mem[i].any():
            table.onm[v] = ratio(int(mu_u[i]), int(deg[i]))
    if table.cm:
        table.overall = sum(table.cm.values(), ZERO) / len(table.cm)
    return table
