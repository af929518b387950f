import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from docd.graph import Graph, is_connected, load_edge_list

DATA = Path(__file__).resolve().parents[1] / "src" / "docd" / "data"


def fixture_graph(name: str) -> Graph:
    return load_edge_list(DATA / f"{name}.txt")


@pytest.fixture(scope="session")
def karate() -> Graph:
    return fixture_graph("karate")


@pytest.fixture(scope="session")
def football() -> Graph:
    return fixture_graph("football")


def gnp(n: int, p: float, rng: random.Random) -> Graph:
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return Graph.from_edges(edges, range(n))


def random_connected(count: int, seed: int, max_n: int = 40) -> list[Graph]:
    """Connected G(n, p) draws, n <= max_n, p cycling through 0.1/0.3/0.5."""
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        n = rng.randint(3, max_n)
        p = (0.1, 0.3, 0.5)[len(out) % 3]
        g = gnp(n, p, rng)
        if is_connected(g):
            out.append(g)
    return out


K3 = Graph.from_edges([(1, 2), (2, 3), (1, 3)])
K4 = Graph.from_edges([(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)])
P3 = Graph.from_edges([(1, 2), (2, 3)])
S4 = Graph.from_edges([(0, 1), (0, 2), (0, 3), (0, 4)])
C5 = Graph.from_edges([(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
TWO_TRIANGLES = Graph.from_edges([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])


@st.composite
def graphs(draw, min_n=1, max_n=14):
    n = draw(st.integers(min_n, max_n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    return Graph.from_edges(chosen, range(n))


@st.composite
def graph_and_assignment(draw, max_n=12, max_k=4):
    g = draw(graphs(min_n=1, max_n=max_n))
    k = draw(st.integers(1, max_k))
    comms = {c: set() for c in range(k)}
    for v in g.vertices:
        picks = draw(st.sets(st.integers(0, k - 1), min_size=1, max_size=k))
        for c in picks:
            comms[c].add(v)
    return g, {c: ms for c, ms in comms.items() if ms}
