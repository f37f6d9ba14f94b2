import numpy as np
import pytest

from dingdate import graph as G


@pytest.fixture
def tiny_graph():
    """One dynasty, one period: the smallest legal hierarchy."""
    return G.build_graph(
        [("d", G.Kind.DYNASTY), ("p", G.Kind.PERIOD)], [("d", "p")]
    )


@pytest.fixture
def small_graph():
    """Two dynasties, three periods, two shapes, three characteristics."""
    nodes = [
        ("A", G.Kind.DYNASTY), ("B", G.Kind.DYNASTY),
        ("p1", G.Kind.PERIOD), ("p2", G.Kind.PERIOD), ("p3", G.Kind.PERIOD),
        ("s1", G.Kind.SHAPE), ("s2", G.Kind.SHAPE),
        ("c1", G.Kind.CHARACTERISTIC), ("c2", G.Kind.CHARACTERISTIC),
        ("c3", G.Kind.CHARACTERISTIC),
    ]
    edges = [
        ("A", "p1"), ("A", "p2"), ("B", "p3"),
        ("p1", "s1"), ("p2", "s1"), ("p3", "s2"),
        ("p1", "c1"), ("p2", "c2"), ("p3", "c2"), ("p3", "c3"),
    ]
    return G.build_graph(nodes, edges)


def random_hierarchy(rng: np.random.Generator, max_nodes: int = 16) -> G.RelationGraph:
    """A random valid graph with at most max_nodes nodes."""
    nd = int(rng.integers(1, 4))
    n_per = int(rng.integers(0, 5))
    budget = max_nodes - nd - n_per
    nodes = [(f"d{i}", G.Kind.DYNASTY) for i in range(nd)]
    edges = []
    for j in range(n_per):
        nodes.append((f"p{j}", G.Kind.PERIOD))
        edges.append((f"d{int(rng.integers(0, nd))}", f"p{j}"))
    n_shape = int(rng.integers(0, min(4, budget) + 1)) if n_per else 0
    for s in range(n_shape):
        nodes.append((f"s{s}", G.Kind.SHAPE))
        parents = rng.choice(n_per, size=int(rng.integers(1, n_per + 1)), replace=False)
        for p in sorted(int(v) for v in parents):
            edges.append((f"p{p}", f"s{s}"))
    budget -= n_shape
    n_char = int(rng.integers(0, min(4, budget) + 1)) if n_per else 0
    for c in range(n_char):
        nodes.append((f"c{c}", G.Kind.CHARACTERISTIC))
        parents = rng.choice(n_per, size=int(rng.integers(1, n_per + 1)), replace=False)
        for p in sorted(int(v) for v in parents):
            edges.append((f"p{p}", f"c{c}"))
    return G.build_graph(nodes, edges)
