import pytest

from causalrag import CausalGraph, CausalTriple, build_index
from causalrag.errors import TooManySubqueriesError
from causalrag.retrieval import (
    KnowledgeItem,
    KnowledgeSet,
    Origin,
    RetrievalParams,
    render_knowledge,
    render_path,
    retrieve,
    subquery_merge,
)


@pytest.fixture
def small_index(encoder):
    records = [
        {"id": "p1", "text": "smoking causes lung cancer in heavy smokers", "source": ""},
        {"id": "p2", "text": "lung cancer treatment options and outcomes", "source": ""},
        {"id": "p3", "text": "diet and exercise improve heart health", "source": ""},
        {"id": "p4", "text": "air pollution is linked to asthma", "source": ""},
    ]
    return build_index(records, encoder)


@pytest.fixture
def embedded_chain(chain_graph, encoder):
    chain_graph.attach_embeddings(encoder)
    return chain_graph


def test_retrieve_semantic_only_with_empty_graph(small_index, encoder):
    ks = retrieve("smoking lung cancer", CausalGraph(), small_index, encoder)
    assert ks.items
    assert all(i.origin is Origin.SEMANTIC for i in ks.items)
    assert ks.seeds == []


def test_retrieve_graph_only_matches_traverse_oracle(embedded_chain, encoder):
    params = RetrievalParams(k=5, max_hops=3, max_paths=20)
    ks = retrieve("a", embedded_chain, None, encoder, params)
    assert all(i.origin is Origin.CAUSAL_PATH for i in ks.items)
    expected = embedded_chain.traverse(ks.seeds, max_hops=3, max_paths=20)
    assert [i.path for i in ks.items] == expected


def test_retrieve_both_sides_empty(encoder):
    ks = retrieve("nothing here", CausalGraph(), None, encoder)
    assert len(ks) == 0


def test_retrieve_union_has_both_origins(small_index, encoder):
    g = CausalGraph()
    g.add_triple(CausalTriple("smoking", "lung cancer", "causes", 0.9))
    g.attach_embeddings(encoder)
    ks = retrieve("does smoking cause lung cancer", g, small_index, encoder)
    origins = {i.origin for i in ks.items}
    assert origins == {Origin.SEMANTIC, Origin.CAUSAL_PATH}
    # sorted semantic (score desc) before causal paths (hops asc)
    kinds = [i.origin for i in ks.items]
    assert kinds == sorted(kinds, key=lambda o: o is Origin.CAUSAL_PATH)


def test_items_revalidate_against_sources(small_index, embedded_chain, encoder):
    ks = retrieve("a b c", embedded_chain, small_index, encoder)
    for item in ks.items:
        if item.origin is Origin.SEMANTIC:
            assert small_index.get(item.passage.id) is item.passage
        else:
            assert embedded_chain.validate_path(item.path)


def test_render_path(embedded_chain):
    path = embedded_chain.traverse(["a"], max_hops=2, max_paths=5)[1]
    assert render_path(embedded_chain, path) == "a → b → c (causes)"


def test_render_path_mixed_relations(encoder):
    g = CausalGraph()
    g.add_triple(CausalTriple("a", "b", "causes"))
    g.add_triple(CausalTriple("b", "c", "worsens"))
    path = g.traverse(["a"], max_hops=2, max_paths=5)[-1]
    assert render_path(g, path) == "a → b → c (causes/worsens)"


def test_semantic_monotonicity_increasing_k(small_index, encoder):
    params_small = RetrievalParams(k=2)
    params_large = RetrievalParams(k=4)
    small = retrieve("smoking lung cancer", None, small_index, encoder, params_small)
    large = retrieve("smoking lung cancer", None, small_index, encoder, params_large)
    small_ids = [i.passage.id for i in small.semantic_items()]
    large_ids = [i.passage.id for i in large.semantic_items()]
    assert large_ids[: len(small_ids)] == small_ids


def test_knowledge_item_requires_exactly_one_source(small_index):
    passage = small_index.get("p1")
    with pytest.raises(ValueError):
        KnowledgeItem(origin=Origin.SEMANTIC, rendered_text="x", score=0.1)
    with pytest.raises(ValueError):
        KnowledgeItem(origin=Origin.CAUSAL_PATH, rendered_text="x", score=0.1,
                      passage=passage)


# --- subquery merge ---

def test_merge_singleton_equals_retrieve(small_index, embedded_chain, encoder):
    single = retrieve("smoking lung cancer", embedded_chain, small_index, encoder)
    merged = subquery_merge(["smoking lung cancer"], embedded_chain, small_index,
                            encoder)
    assert [i.identity for i in merged.items] == [i.identity for i in single.items]
    assert merged.seeds == single.seeds


def test_merge_disjoint_sums_counts(small_index, encoder):
    params = RetrievalParams(k=1)
    a = retrieve("smoking lung cancer smokers", None, small_index, encoder, params)
    b = retrieve("diet exercise heart", None, small_index, encoder, params)
    assert {i.passage.id for i in a.items} != {i.passage.id for i in b.items}
    merged = subquery_merge(["smoking lung cancer smokers", "diet exercise heart"],
                            None, small_index, encoder, params)
    assert len(merged) == len(a) + len(b)


def test_merge_duplicate_keeps_max_score(small_index, encoder):
    params = RetrievalParams(k=4)
    merged = subquery_merge(["smoking causes lung cancer",
                             "lung cancer in heavy smokers"],
                            None, small_index, encoder, params)
    a = retrieve("smoking causes lung cancer", None, small_index, encoder, params)
    b = retrieve("lung cancer in heavy smokers", None, small_index, encoder, params)
    scores: dict[str, float] = {}
    for ks in (a, b):
        for item in ks.items:
            pid = item.passage.id
            scores[pid] = max(scores.get(pid, -1.0), item.score)
    got = {i.passage.id: i.score for i in merged.items}
    assert got == pytest.approx(scores)


def test_merge_rejects_more_than_four():
    with pytest.raises(TooManySubqueriesError):
        subquery_merge(["q"] * 5, None, None, encoder=None)


def test_merge_rejects_empty_list():
    with pytest.raises(ValueError):
        subquery_merge([], None, None, encoder=None)


# --- prompt rendering cap ---

def test_render_knowledge_empty():
    assert render_knowledge(KnowledgeSet()) == "(no retrieved evidence)"


def test_render_knowledge_caps_characters(small_index, encoder):
    ks = retrieve("smoking lung cancer diet exercise asthma pollution",
                  None, small_index, encoder, RetrievalParams(k=4))
    full = render_knowledge(ks, limit=4000)
    assert all(item.rendered_text in full for item in ks.items)
    capped = render_knowledge(ks, limit=len(full) - 1)
    # lowest-priority (tail) item dropped first
    kept = [i.rendered_text for i in ks.items[:-1]]
    assert all(text in capped for text in kept)
    assert ks.items[-1].rendered_text not in capped


def test_trace_dict_shape(small_index, embedded_chain, encoder):
    ks = retrieve("a b smoking", embedded_chain, small_index, encoder)
    payload = ks.to_dict()
    assert set(payload) == {"query", "seeds", "items"}
    for item in payload["items"]:
        assert item["origin"] in ("semantic", "causal_path")
