import json

import numpy as np
import pytest

from causalrag import CausalGraph, CausalTriple, load_triples, save_triples
from causalrag.errors import EmptyLabelError, SelfLoopError, UnknownSeedError

from conftest import enumerate_paths, random_graph, reachability_matrix


# --- construction ---

def test_add_triple_creates_nodes():
    g = CausalGraph()
    g.add_triple(CausalTriple("smoking", "lung cancer", "causes", 0.9))
    assert len(g) == 1
    assert sorted(g.nodes) == ["lung cancer", "smoking"]


def test_add_triple_idempotent_higher_confidence_wins():
    g = CausalGraph()
    g.add_triple(CausalTriple("a", "b", "causes", 0.9))
    g.add_triple(CausalTriple("a", "b", "causes", 0.7))
    assert len(g) == 1
    assert g.edges[("a", "b", "causes")].confidence == 0.9
    # and in the other order
    g2 = CausalGraph()
    g2.add_triple(CausalTriple("a", "b", "causes", 0.7))
    g2.add_triple(CausalTriple("a", "b", "causes", 0.9))
    assert g2.edges[("a", "b", "causes")].confidence == 0.9


def test_add_triple_self_loop_rejected():
    g = CausalGraph()
    with pytest.raises(SelfLoopError):
        g.add_triple(CausalTriple("x", "x", "causes", 1.0))
    with pytest.raises(SelfLoopError):
        # labels that normalize to the same node
        g.add_triple(CausalTriple("X ", "x.", "causes", 1.0))


def test_add_triple_empty_label_rejected():
    g = CausalGraph()
    with pytest.raises(EmptyLabelError):
        g.add_triple(CausalTriple("", "b"))
    with pytest.raises(EmptyLabelError):
        g.add_triple(CausalTriple("a", " . "))


def test_confidence_out_of_range_rejected():
    with pytest.raises(ValueError):
        CausalTriple("a", "b", "causes", 1.5)


def test_labels_normalized():
    g = CausalGraph()
    g.add_triple(CausalTriple("  High   BMI ", "Heart Disease.", "Causes"))
    assert ("high bmi", "heart disease", "causes") in g.edges


def test_reverse_index_is_transpose():
    g = random_graph(np.random.default_rng(3), 8, 14)
    for cause in g._forward:
        for effect in g._forward[cause]:
            assert cause in g._reverse[effect]
    for effect in g._reverse:
        for cause in g._reverse[effect]:
            assert effect in g._forward[cause]


# --- align_query ---

def test_align_lexical_substring(encoder):
    g = CausalGraph()
    g.add_triple(CausalTriple("diabetes", "kidney damage"))
    seeds = g.align_query(None, ["does", "diabetes", "damage", "kidneys"],
                          alignment_threshold=0.9, max_seeds=5)
    assert "diabetes" in seeds


def test_align_unreachable_threshold_no_lexical_overlap():
    g = CausalGraph()
    g.add_triple(CausalTriple("alpha", "beta"))
    g.nodes["alpha"].embedding = np.zeros(4)
    g.nodes["alpha"].embedding[0] = 1.0
    g.nodes["beta"].embedding = np.zeros(4)
    g.nodes["beta"].embedding[1] = 1.0
    query = np.zeros(4)
    query[2] = 1.0
    assert g.align_query(query, ["unrelated"], alignment_threshold=1.0) == []


def test_align_matches_brute_force_cosine_scan():
    g = CausalGraph()
    for a, b in [("n0", "n1"), ("n1", "n2"), ("n2", "n3"), ("n3", "n4")]:
        g.add_triple(CausalTriple(a, b))
    rng = np.random.default_rng(11)
    for node in g.nodes.values():
        v = rng.normal(size=6)
        node.embedding = v / np.linalg.norm(v)
    query = rng.normal(size=6)
    query /= np.linalg.norm(query)

    def cos(u, v):
        return float(np.dot(u, v))

    threshold = 0.5
    expected = sorted(
        ((cos(node.embedding, query), nid) for nid, node in g.nodes.items()
         if cos(node.embedding, query) >= threshold),
        key=lambda t: (-t[0], t[1]))
    got = g.align_query(query, [], alignment_threshold=threshold, max_seeds=10)
    assert got == [nid for _, nid in expected]


def test_align_orders_by_cosine_then_id(encoder):
    g = CausalGraph()
    g.add_triple(CausalTriple("zeta", "alpha"))
    # no embeddings: both lexical matches score 0.0, so ids break the tie
    seeds = g.align_query(None, ["zeta", "alpha"], 0.5, max_seeds=5)
    assert seeds == ["alpha", "zeta"]


def test_align_respects_max_seeds():
    g = CausalGraph()
    for i in range(8):
        g.add_triple(CausalTriple(f"t{i}", f"u{i}"))
    seeds = g.align_query(None, [f"t{i}" for i in range(8)], 0.5, max_seeds=3)
    assert len(seeds) == 3


# --- traverse ---

def test_traverse_chain_from_head(chain_graph):
    paths = chain_graph.traverse(["a"], max_hops=2, max_paths=20)
    assert [p.nodes for p in paths] == [("a", "b"), ("a", "b", "c")]
    assert paths[0].hops == 1 and paths[1].hops == 2
    assert paths[0].min_confidence == pytest.approx(0.9)
    assert paths[1].min_confidence == pytest.approx(0.8)


def test_traverse_includes_reverse_exposure(chain_graph):
    paths = chain_graph.traverse(["b"], max_hops=1, max_paths=20)
    assert {p.nodes for p in paths} == {("b", "c"), ("a", "b")}


def test_traverse_sink_node_only_reverse(chain_graph):
    paths = chain_graph.traverse(["c"], max_hops=3, max_paths=20)
    assert [p.nodes for p in paths] == [("b", "c")]


def test_traverse_unknown_seed(chain_graph):
    with pytest.raises(UnknownSeedError):
        chain_graph.traverse(["nope"], max_hops=2)


def test_traverse_max_paths_truncation(chain_graph):
    paths = chain_graph.traverse(["a"], max_hops=2, max_paths=1)
    assert [p.nodes for p in paths] == [("a", "b")]


def test_traverse_handles_cycles():
    g = CausalGraph()
    g.add_triple(CausalTriple("a", "b"))
    g.add_triple(CausalTriple("b", "a"))
    paths = g.traverse(["a"], max_hops=5, max_paths=50)
    # simple paths only: the cycle cannot repeat nodes
    assert {p.nodes for p in paths} == {("a", "b"), ("b", "a")}


def test_traverse_matches_exhaustive_enumeration_oracle():
    rng = np.random.default_rng(23)
    for trial in range(25):
        g = random_graph(rng, int(rng.integers(2, 10)), int(rng.integers(1, 20)))
        seeds = list(rng.choice(sorted(g.nodes),
                                size=int(rng.integers(1, len(g.nodes) + 1)),
                                replace=False))
        max_hops = int(rng.integers(1, 5))
        got = g.traverse(seeds, max_hops=max_hops, max_paths=10_000)
        assert {p.nodes for p in got} == enumerate_paths(g, seeds, max_hops)


def test_traverse_sorted_and_deterministic():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 8, 16)
    seeds = sorted(g.nodes)[:3]
    a = g.traverse(seeds, max_hops=3, max_paths=1000)
    b = g.traverse(seeds, max_hops=3, max_paths=1000)
    assert a == b
    keys = [(p.hops, -p.min_confidence, p.nodes) for p in a]
    assert keys == sorted(keys)


def test_traverse_paths_revalidate_edge_by_edge():
    rng = np.random.default_rng(9)
    g = random_graph(rng, 9, 18)
    for path in g.traverse(sorted(g.nodes)[:4], max_hops=3, max_paths=1000):
        assert g.validate_path(path)
        assert path.hops == len(path.nodes) - 1


# --- entails ---

def test_entails_chain(chain_graph):
    assert chain_graph.entails("a", "c", 2) is True
    assert chain_graph.entails("c", "a", 3) is False
    assert chain_graph.entails("a", "c", 1) is False


def test_entails_unknown_labels(chain_graph):
    assert chain_graph.entails("ghost", "c", 3) is False
    assert chain_graph.entails("a", "ghost", 3) is False


def test_entails_matches_transitive_closure_oracle():
    rng = np.random.default_rng(31)
    g = random_graph(rng, 8, 12)
    labels, reach = reachability_matrix(g, max_hops=8)
    for i, src in enumerate(labels):
        for j, dst in enumerate(labels):
            if i == j:
                continue
            assert g.entails(src, dst, 8) == bool(reach[i, j])


def test_entails_hop_bound_matches_matrix_powers():
    rng = np.random.default_rng(37)
    g = random_graph(rng, 7, 12)
    for max_hops in (1, 2, 3):
        labels, reach = reachability_matrix(g, max_hops=max_hops)
        for i, src in enumerate(labels):
            for j, dst in enumerate(labels):
                if i != j:
                    assert g.entails(src, dst, max_hops) == bool(reach[i, j])


def test_entails_antisymmetric_on_acyclic_graphs():
    rng = np.random.default_rng(41)
    for _ in range(10):
        n = int(rng.integers(3, 9))
        g = CausalGraph()
        for _ in range(int(rng.integers(2, 14))):
            i, j = sorted(rng.choice(n, size=2, replace=False))
            g.add_triple(CausalTriple(f"n{i}", f"n{j}"))
        nodes = sorted(g.nodes)
        for x in nodes:
            for y in nodes:
                if x != y:
                    assert not (g.entails(x, y, 8) and g.entails(y, x, 8))


# --- triple files ---

def test_load_triples_defaults_and_unknown_keys(tmp_path):
    path = tmp_path / "triples.jsonl"
    rows = [
        {"cause": "a", "effect": "b", "relation": "causes", "confidence": 0.9,
         "source": "s1", "verified": True, "junk": 1},
        {"cause": "b", "effect": "c"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    g = load_triples(str(path))
    assert len(g) == 2
    assert g.edges[("b", "c", "causes")].confidence == 1.0
    assert g.edges[("b", "c", "causes")].verified is False


def test_load_triples_verified_only(tmp_path):
    path = tmp_path / "triples.jsonl"
    rows = [
        {"cause": "a", "effect": "b", "verified": True},
        {"cause": "b", "effect": "c", "verified": False},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    assert len(load_triples(str(path))) == 2
    assert len(load_triples(str(path), verified_only=True)) == 1


def test_save_load_round_trip(tmp_path, chain_graph):
    path = tmp_path / "graph.jsonl"
    save_triples(chain_graph, str(path))
    loaded = load_triples(str(path))
    assert loaded.edges == chain_graph.edges
