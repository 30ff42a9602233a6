"""Dual-path retrieval: semantic top-k search unioned with graph traversal.

A refined query is embedded once and sent down both paths; the results are
merged into a single knowledge set whose items carry their origin, so every
downstream consumer (generation, verification, metrics) can tell passages
from causal paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .embedding import Encoder, Passage, VectorIndex
from .errors import TooManySubqueriesError
from .graph import CausalGraph, CausalPath
from .text import tokenize


class Origin(str, Enum):
    SEMANTIC = "semantic"
    CAUSAL_PATH = "causal_path"


@dataclass
class RetrievalParams:
    k: int = 5
    max_hops: int = 3
    max_paths: int = 20
    alignment_threshold: float = 0.55
    max_seeds: int = 5


@dataclass
class KnowledgeItem:
    """One retrieved unit: either a passage or a rendered causal path."""

    origin: Origin
    rendered_text: str
    score: float
    passage: Passage | None = None
    path: CausalPath | None = None

    def __post_init__(self):
        if (self.passage is None) == (self.path is None):
            raise ValueError("exactly one of passage/path must be set")
        if self.origin is Origin.SEMANTIC and self.passage is None:
            raise ValueError("semantic items carry a passage")
        if self.origin is Origin.CAUSAL_PATH and self.path is None:
            raise ValueError("causal-path items carry a path")
        if not self.rendered_text:
            raise ValueError("rendered_text must be non-empty")

    @property
    def identity(self) -> tuple:
        if self.passage is not None:
            return (self.origin.value, self.passage.id)
        return (self.origin.value, self.path.nodes)

    def to_dict(self) -> dict:
        out = {
            "origin": self.origin.value,
            "rendered_text": self.rendered_text,
            "score": self.score,
        }
        if self.passage is not None:
            out["passage_id"] = self.passage.id
        if self.path is not None:
            out["path"] = list(self.path.nodes)
            out["hops"] = self.path.hops
        return out


@dataclass
class KnowledgeSet:
    """The unified retrieval result for one (refined) query."""

    items: list[KnowledgeItem] = field(default_factory=list)
    query: str = ""
    seeds: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def semantic_items(self) -> list[KnowledgeItem]:
        return [i for i in self.items if i.origin is Origin.SEMANTIC]

    def path_items(self) -> list[KnowledgeItem]:
        return [i for i in self.items if i.origin is Origin.CAUSAL_PATH]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "seeds": list(self.seeds),
            "items": [i.to_dict() for i in self.items],
        }


def render_path(graph: CausalGraph, path: CausalPath) -> str:
    """Arrow-joined labels plus the relation, e.g. "a → b → c (causes)"."""
    relations = []
    for a, b in zip(path.nodes, path.nodes[1:]):
        rel = graph.edge_relation(a, b)
        if rel not in relations:
            relations.append(rel)
    return " → ".join(path.nodes) + f" ({'/'.join(relations)})"


def _sort_items(items: Iterable[KnowledgeItem]) -> list[KnowledgeItem]:
    semantic = sorted(
        (i for i in items if i.origin is Origin.SEMANTIC),
        key=lambda i: (-i.score, i.passage.id),
    )
    paths = sorted(
        (i for i in items if i.origin is Origin.CAUSAL_PATH),
        key=lambda i: (i.path.hops, -i.path.min_confidence, i.path.nodes),
    )
    return semantic + paths


def retrieve(query: str, graph: CausalGraph | None, index: VectorIndex | None,
             encoder: Encoder, params: RetrievalParams | None = None) -> KnowledgeSet:
    """Run both retrieval paths for one query and union the results.

    Either side may be empty (no graph, no index, or simply no hits); the
    other side still contributes. Graph seeds come from lexical and
    embedding alignment of the query against node labels.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    params = params or RetrievalParams()
    query_embedding = encoder.encode(query)

    items: list[KnowledgeItem] = []
    if index is not None and len(index) > 0:
        for passage_id, score in index.search(query_embedding, params.k):
            passage = index.get(passage_id)
            items.append(KnowledgeItem(
                origin=Origin.SEMANTIC,
                rendered_text=passage.text,
                score=score,
                passage=passage,
            ))

    seeds: list[str] = []
    if graph is not None and graph.nodes:
        seeds = graph.align_query(
            query_embedding, tokenize(query),
            alignment_threshold=params.alignment_threshold,
            max_seeds=params.max_seeds,
        )
        if seeds:
            for path in graph.traverse(seeds, max_hops=params.max_hops,
                                       max_paths=params.max_paths):
                items.append(KnowledgeItem(
                    origin=Origin.CAUSAL_PATH,
                    rendered_text=render_path(graph, path),
                    score=path.min_confidence,
                    path=path,
                ))

    return KnowledgeSet(items=_sort_items(items), query=query, seeds=seeds)


def subquery_merge(subqueries: Sequence[str], graph: CausalGraph | None,
                   index: VectorIndex | None, encoder: Encoder,
                   params: RetrievalParams | None = None) -> KnowledgeSet:
    """Retrieve each subquery and union the results.

    Duplicates (same origin and identity) collapse to one item keeping the
    maximum score across subqueries. At most four subqueries are accepted,
    matching the decomposition contract.
    """
    if not subqueries:
        raise ValueError("at least one subquery required")
    if len(subqueries) > 4:
        raise TooManySubqueriesError(f"{len(subqueries)} subqueries, limit is 4")
    merged: dict[tuple, KnowledgeItem] = {}
    seeds: list[str] = []
    for subquery in subqueries:
        result = retrieve(subquery, graph, index, encoder, params)
        for seed in result.seeds:
            if seed not in seeds:
                seeds.append(seed)
        for item in result.items:
            existing = merged.get(item.identity)
            if existing is None or item.score > existing.score:
                merged[item.identity] = item
    return KnowledgeSet(
        items=_sort_items(merged.values()),
        query=" | ".join(subqueries),
        seeds=seeds,
    )


def render_knowledge(knowledge: KnowledgeSet, limit: int = 4000) -> str:
    """Join rendered items for prompting, capped at `limit` characters.

    When the joined text would exceed the cap, the lowest-priority items
    (the tail of the sorted item list) are dropped first.
    """
    if not knowledge.items:
        return "(no retrieved evidence)"
    kept = list(knowledge.items)
    while kept:
        lines = [f"- {item.rendered_text}" for item in kept]
        text = "\n".join(lines)
        if len(text) <= limit:
            return text
        kept.pop()
    return "(no retrieved evidence)"
