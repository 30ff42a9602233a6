"""Directed causal knowledge graph: storage, alignment, and multi-hop traversal.

The graph stores cause -> effect edges with relation labels and confidences.
Node ids are normalized labels, so lookups and sort orders are deterministic.
Cycles are permitted; traversal stays bounded through the hop limit and the
simple-path constraint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embedding import Encoder, cosine
from .errors import EmptyLabelError, SelfLoopError, UnknownSeedError
from .text import normalize_label


@dataclass
class CausalNode:
    """A graph vertex; `id` equals the normalized label."""

    id: str
    label: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class CausalTriple:
    """One directed cause -> effect edge with provenance."""

    cause: str
    effect: str
    relation: str = "causes"
    confidence: float = 1.0
    source: str = ""
    verified: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class CausalPath:
    """A directed simple path through the graph."""

    nodes: tuple[str, ...]
    hops: int
    min_confidence: float

    def __post_init__(self):
        if self.hops != len(self.nodes) - 1 or self.hops < 1:
            raise ValueError("hops must equal len(nodes) - 1 and be >= 1")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("paths must be simple (no repeated nodes)")


class CausalGraph:
    """In-process triple store with forward and reverse adjacency indices.

    Mutation (add_triple) is a build-phase operation; once built, the graph
    is treated as immutable and all query methods are safe to call
    concurrently.
    """

    def __init__(self):
        self.nodes: dict[str, CausalNode] = {}
        self.edges: dict[tuple[str, str, str], CausalTriple] = {}
        self._forward: dict[str, dict[str, list[str]]] = {}
        self._reverse: dict[str, dict[str, list[str]]] = {}

    def __len__(self) -> int:
        return len(self.edges)

    # --- construction ---

    def _ensure_node(self, label: str) -> str:
        norm = normalize_label(label)
        if not norm:
            raise EmptyLabelError(f"label {label!r} is empty after normalization")
        if norm not in self.nodes:
            self.nodes[norm] = CausalNode(id=norm, label=norm)
            self._forward[norm] = {}
            self._reverse[norm] = {}
        return norm

    def add_triple(self, triple: CausalTriple) -> "CausalGraph":
        """Insert one edge; endpoint nodes are created from the labels.

        Re-adding an existing (cause, effect, relation) keeps whichever copy
        has the higher confidence.
        """
        cause = self._ensure_node(triple.cause)
        effect = self._ensure_node(triple.effect)
        if cause == effect:
            raise SelfLoopError(f"self-loop on {cause!r}")
        relation = normalize_label(triple.relation) or "causes"
        key = (cause, effect, relation)
        stored = CausalTriple(cause=cause, effect=effect, relation=relation,
                              confidence=triple.confidence, source=triple.source,
                              verified=triple.verified)
        existing = self.edges.get(key)
        if existing is None or stored.confidence > existing.confidence:
            self.edges[key] = stored
        if effect not in self._forward[cause]:
            self._forward[cause][effect] = []
        if relation not in self._forward[cause][effect]:
            self._forward[cause][effect].append(relation)
        if cause not in self._reverse[effect]:
            self._reverse[effect][cause] = []
        if relation not in self._reverse[effect][cause]:
            self._reverse[effect][cause].append(relation)
        return self

    def attach_embeddings(self, encoder: Encoder) -> None:
        """Embed every node label with the given encoder."""
        for node in self.nodes.values():
            node.embedding = encoder.encode(node.label)

    # --- edge helpers ---

    def successors(self, node_id: str) -> list[str]:
        return sorted(self._forward.get(node_id, {}))

    def predecessors(self, node_id: str) -> list[str]:
        return sorted(self._reverse.get(node_id, {}))

    def has_edge(self, cause: str, effect: str) -> bool:
        return effect in self._forward.get(cause, {})

    def edge_confidence(self, cause: str, effect: str) -> float:
        """Highest confidence among parallel edges for this node pair."""
        relations = self._forward.get(cause, {}).get(effect, [])
        if not relations:
            raise KeyError(f"no edge {cause!r} -> {effect!r}")
        return max(self.edges[(cause, effect, r)].confidence for r in relations)

    def edge_relation(self, cause: str, effect: str) -> str:
        """Relation label of the highest-confidence edge for this node pair."""
        relations = self._forward.get(cause, {}).get(effect, [])
        if not relations:
            raise KeyError(f"no edge {cause!r} -> {effect!r}")
        best = max(relations,
                   key=lambda r: (self.edges[(cause, effect, r)].confidence, r))
        return best

    # --- queries ---

    def align_query(self, query_embedding: np.ndarray | None, query_terms: Sequence[str],
                    alignment_threshold: float = 0.55, max_seeds: int = 5) -> list[str]:
        """Node ids aligned with a query, best-first.

        A node qualifies lexically when its label is a substring or
        superstring of a normalized query term, or semantically when the
        cosine between its embedding and the query embedding reaches
        `alignment_threshold`. Results order by descending cosine with ties
        broken by ascending node id, truncated to `max_seeds`.
        """
        if not 0.0 <= alignment_threshold <= 1.0:
            raise ValueError("alignment_threshold must be in [0, 1]")
        terms = [normalize_label(t) for t in query_terms]
        terms = [t for t in terms if t]
        matches: list[tuple[float, str]] = []
        for node_id, node in self.nodes.items():
            score = 0.0
            if node.embedding is not None and query_embedding is not None:
                score = cosine(node.embedding, query_embedding)
            lexical = any(node_id in term or term in node_id for term in terms)
            semantic = (node.embedding is not None and query_embedding is not None
                        and score >= alignment_threshold)
            if lexical or semantic:
                matches.append((score, node_id))
        matches.sort(key=lambda item: (-item[0], item[1]))
        return [node_id for _, node_id in matches[:max_seeds]]

    def traverse(self, seeds: Iterable[str], max_hops: int = 3,
                 max_paths: int = 20) -> list[CausalPath]:
        """Directed simple paths out of the seeds, plus upstream exposure.

        Collects every forward simple path of 1..max_hops hops starting at
        each seed, and the one-hop reverse edge into each seed (so upstream
        causes of a seed are visible). Paths are deduplicated, sorted by
        (hops ascending, min_confidence descending, node sequence), and
        truncated to `max_paths`.
        """
        if max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        seed_list = [normalize_label(s) for s in seeds]
        for seed in seed_list:
            if seed not in self.nodes:
                raise UnknownSeedError(f"seed {seed!r} not in graph")
        found: set[tuple[str, ...]] = set()
        for seed in seed_list:
            stack: list[tuple[str, ...]] = [(seed,)]
            while stack:
                path = stack.pop()
                if len(path) - 1 >= max_hops:
                    continue
                for nxt in self._forward.get(path[-1], {}):
                    if nxt in path:
                        continue
                    extended = path + (nxt,)
                    found.add(extended)
                    stack.append(extended)
            for prev in self._reverse.get(seed, {}):
                if prev != seed:
                    found.add((prev, seed))
        paths = [
            CausalPath(
                nodes=nodes,
                hops=len(nodes) - 1,
                min_confidence=min(self.edge_confidence(a, b)
                                   for a, b in zip(nodes, nodes[1:])),
            )
            for nodes in found
        ]
        paths.sort(key=lambda p: (p.hops, -p.min_confidence, p.nodes))
        return paths[:max_paths]

    def entails(self, cause_label: str, effect_label: str, max_hops: int = 3) -> bool:
        """True iff a directed path of <= max_hops hops links the two labels."""
        cause = normalize_label(cause_label)
        effect = normalize_label(effect_label)
        if cause not in self.nodes or effect not in self.nodes:
            return False
        frontier = {cause}
        visited = {cause}
        for _ in range(max_hops):
            nxt: set[str] = set()
            for node in frontier:
                for succ in self._forward.get(node, {}):
                    if succ == effect:
                        return True
                    if succ not in visited:
                        visited.add(succ)
                        nxt.add(succ)
            if not nxt:
                return False
            frontier = nxt
        return False

    def validate_path(self, path: CausalPath) -> bool:
        """Re-check a path edge by edge against the stored adjacency."""
        return all(self.has_edge(a, b) for a, b in zip(path.nodes, path.nodes[1:]))


def load_triples(path: str, verified_only: bool = False) -> CausalGraph:
    """Build a graph from a triples JSONL file.

    Each line is {"cause", "effect", "relation", "confidence", "source",
    "verified"}; unknown keys are ignored, missing confidence defaults to
    1.0, missing verified defaults to false. `verified_only` drops edges
    whose verified flag is false.
    """
    graph = CausalGraph()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triple = CausalTriple(
                cause=obj["cause"],
                effect=obj["effect"],
                relation=obj.get("relation", "causes"),
                confidence=float(obj.get("confidence", 1.0)),
                source=obj.get("source", ""),
                verified=bool(obj.get("verified", False)),
            )
            if verified_only and not triple.verified:
                continue
            graph.add_triple(triple)
    return graph


def save_triples(graph: CausalGraph, path: str) -> None:
    """Write the graph back out as sorted triples JSONL."""
    with open(path, "w", encoding="utf-8") as handle:
        for key in sorted(graph.edges):
            t = graph.edges[key]
            row = {
                "cause": t.cause,
                "effect": t.effect,
                "relation": t.relation,
                "confidence": t.confidence,
                "source": t.source,
                "verified": t.verified,
            }
            handle.write(json.dumps(row, sort_keys=True) + "\n")
