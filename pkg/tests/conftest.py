import pathlib

import numpy as np
import pytest

from causalrag import CausalGraph, CausalTriple, HashingEncoder

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def encoder():
    return HashingEncoder()


@pytest.fixture
def chain_graph():
    """a -> b -> c, the smallest multi-hop graph."""
    g = CausalGraph()
    g.add_triple(CausalTriple("a", "b", "causes", 0.9))
    g.add_triple(CausalTriple("b", "c", "causes", 0.8))
    return g


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def random_graph(rng: np.random.Generator, n_nodes: int, n_edges: int) -> CausalGraph:
    """Random digraph with unique node labels and no self-loops."""
    labels = [f"n{i}" for i in range(n_nodes)]
    g = CausalGraph()
    for label in labels:
        g._ensure_node(label)
    added = set()
    attempts = 0
    while len(added) < n_edges and attempts < n_edges * 20:
        attempts += 1
        a, b = rng.choice(n_nodes, size=2, replace=False)
        key = (labels[a], labels[b])
        if key in added:
            continue
        added.add(key)
        g.add_triple(CausalTriple(labels[a], labels[b], "causes",
                                  float(rng.uniform(0.1, 1.0))))
    return g


def enumerate_paths(graph: CausalGraph, seeds, max_hops: int) -> set[tuple[str, ...]]:
    """Independent oracle: exhaustive forward simple paths from the seeds
    plus one-hop reverse edges into each seed."""
    edges = {(t.cause, t.effect) for t in graph.edges.values()}
    found: set[tuple[str, ...]] = set()

    def extend(path: tuple[str, ...]):
        if len(path) - 1 >= max_hops:
            return
        for cause, effect in edges:
            if cause == path[-1] and effect not in path:
                found.add(path + (effect,))
                extend(path + (effect,))

    for seed in seeds:
        extend((seed,))
        for cause, effect in edges:
            if effect == seed and cause != seed:
                found.add((cause, seed))
    return found


def reachability_matrix(graph: CausalGraph, max_hops: int):
    """Independent oracle: boolean adjacency-matrix powers.

    Returns (labels, reach) where reach[i, j] is True iff a directed path of
    at most max_hops hops runs from labels[i] to labels[j].
    """
    labels = sorted(graph.nodes)
    idx = {label: i for i, label in enumerate(labels)}
    n = len(labels)
    adjacency = np.zeros((n, n), dtype=bool)
    for cause, effect, _ in graph.edges:
        adjacency[idx[cause], idx[effect]] = True
    reach = np.zeros((n, n), dtype=bool)
    power = np.eye(n, dtype=bool)
    for _ in range(max_hops):
        power = (power.astype(int) @ adjacency.astype(int)) > 0
        reach |= power
    return labels, reach
