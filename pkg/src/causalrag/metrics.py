"""Evaluation metrics and the stage-ablation harness.

Covers answer correctness (accuracy / precision / recall / F1), retrieval
quality (causal retrieval coverage, causal chain depth, context relevance),
refinement quality (semantic refinement score), and generation quality
(groundedness, hallucination rate). `run_eval` drives the pipeline over a
gold file with modules toggled on or off and folds the per-query rows into
one report.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol

from .embedding import Encoder, cosine
from .retrieval import KnowledgeSet
from .text import normalize_label, split_sentences, tokenize
from .verification import extract_claims, hallucination_check


@dataclass
class GoldRecord:
    """One labeled evaluation query."""

    query: str
    answer: str
    gold_edges: list[tuple[str, str]] = field(default_factory=list)
    choices: list[str] | None = None
    relevant_passage_ids: list[str] | None = None

    def __post_init__(self):
        if not self.answer:
            raise ValueError("gold answer must be non-empty")
        self.gold_edges = [
            (normalize_label(c), normalize_label(e)) for c, e in self.gold_edges
        ]


def load_gold(path: str) -> list[GoldRecord]:
    """Read a gold JSONL file: {"query", "answer", "gold_edges", "choices"?}."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(GoldRecord(
                query=obj["query"],
                answer=obj["answer"],
                gold_edges=[tuple(edge) for edge in obj.get("gold_edges", [])],
                choices=obj.get("choices"),
                relevant_passage_ids=obj.get("relevant_passage_ids"),
            ))
    return records


def crc(retrieved: KnowledgeSet, gold_edges: set[tuple[str, str]]) -> float:
    """Causal retrieval coverage: fraction of retrieved items on gold edges.

    A causal path matches when every consecutive node pair is a gold edge;
    a passage matches when its text contains both endpoints of some gold
    edge. Empty retrieval scores 0.0.
    """
    if not retrieved.items:
        return 0.0
    gold = {(normalize_label(c), normalize_label(e)) for c, e in gold_edges}
    matched = 0
    for item in retrieved.items:
        if item.path is not None:
            pairs = list(zip(item.path.nodes, item.path.nodes[1:]))
            if pairs and all(pair in gold for pair in pairs):
                matched += 1
        else:
            text = normalize_label(item.passage.text)
            if any(c in text and e in text for c, e in gold):
                matched += 1
    return matched / len(retrieved.items)


def ccd(retrieved: KnowledgeSet) -> float:
    """Causal chain depth: mean hop count over retrieved paths (0.0 if none)."""
    hops = [item.path.hops for item in retrieved.path_items()]
    if not hops:
        return 0.0
    return sum(hops) / len(hops)


def srs(original: str, refined: str, encoder: Encoder) -> float:
    """Semantic refinement score: clamped cosine between the two queries."""
    return max(0.0, cosine(encoder.encode(original), encoder.encode(refined)))


def srs_best(original: str, refined_queries: list[str], encoder: Encoder) -> float:
    """Refinement score for multi-query refinements: best subquery wins."""
    if not refined_queries:
        return 1.0
    return max(srs(original, q, encoder) for q in refined_queries)


def groundedness(answer: str, knowledge: KnowledgeSet, encoder: Encoder) -> float:
    """Mean, over answer sentences, of the best cosine to any knowledge item."""
    if not knowledge.items:
        return 0.0
    sentences = split_sentences(answer)
    if not sentences:
        return 0.0
    item_embeddings = [encoder.encode(i.rendered_text) for i in knowledge.items]
    per_sentence = [
        max(cosine(encoder.encode(s), emb) for emb in item_embeddings)
        for s in sentences
    ]
    return sum(per_sentence) / len(per_sentence)


def context_relevance(query: str, knowledge: KnowledgeSet, encoder: Encoder) -> float:
    """Mean cosine between the query and each retrieved item (0.0 if empty)."""
    if not knowledge.items:
        return 0.0
    query_embedding = encoder.encode(query)
    scores = [cosine(query_embedding, encoder.encode(i.rendered_text))
              for i in knowledge.items]
    return sum(scores) / len(scores)


def answer_correct(predicted: str, gold: str, mode: str = "token_f1",
                   threshold: float = 0.6) -> tuple[bool, float, float, float]:
    """Correctness plus (precision, recall, f1).

    "exact_choice" compares normalized strings (multiple-choice letters);
    its P/R/F1 are the 0/1 indicator. "token_f1" computes bag-of-tokens
    precision/recall/F1 and calls the answer correct when F1 reaches the
    threshold.
    """
    if mode == "exact_choice":
        correct = normalize_label(predicted) == normalize_label(gold)
        score = 1.0 if correct else 0.0
        return correct, score, score, score
    if mode != "token_f1":
        raise ValueError(f"unknown correctness mode {mode!r}")
    pred_tokens = Counter(tokenize(predicted))
    gold_tokens = Counter(tokenize(gold))
    overlap = sum((pred_tokens & gold_tokens).values())
    if overlap == 0:
        return False, 0.0, 0.0, 0.0
    precision = overlap / sum(pred_tokens.values())
    recall = overlap / sum(gold_tokens.values())
    f1 = 2 * precision * recall / (precision + recall)
    return f1 >= threshold, precision, recall, f1


class EvalPipeline(Protocol):
    """What run_eval needs from a pipeline: run one query under stage flags."""

    def run(self, query: str, stages=None): ...

    @property
    def encoder(self) -> Encoder: ...

    @property
    def config(self): ...


@dataclass
class EvalReport:
    stage_label: str
    per_query: list[dict]
    aggregate: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {"stages": self.stage_label, "aggregate": self.aggregate,
             "per_query": self.per_query},
            sort_keys=True, indent=2)

    def to_table(self) -> str:
        """One aligned row in the ablation-table column order."""
        columns = ["CRC", "CCD", "SRS", "Groundedness", "HR", "F1"]
        keys = ["crc", "ccd", "srs", "groundedness", "hr", "f1"]
        header = f"{'stage':<12}" + "".join(f"{c:>14}" for c in columns)
        row = f"{self.stage_label:<12}" + "".join(
            f"{self.aggregate[k]:>14.4f}" for k in keys)
        return header + "\n" + row

    def save(self, prefix: str) -> None:
        with open(prefix + ".json", "w", encoding="utf-8") as handle:
            handle.write(self.to_json() + "\n")
        with open(prefix + ".txt", "w", encoding="utf-8") as handle:
            handle.write(self.to_table() + "\n")


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def run_eval(pipeline: EvalPipeline, gold: list[GoldRecord], stages=None,
             stage_label: str = "custom") -> EvalReport:
    """Evaluate every gold record under the given stage flags.

    The hallucination flag on each row is the offline verifier re-applied
    to the final answer, so the rate is comparable across stage settings
    whether or not the pipeline itself ran the check.
    """
    encoder = pipeline.encoder
    config = pipeline.config
    rows = []
    for idx, record in enumerate(gold):
        answer, state = pipeline.run(record.query, stages=stages)
        mode = "exact_choice" if record.choices else "token_f1"
        correct, precision, recall, f1 = answer_correct(answer, record.answer, mode)
        final_claims = extract_claims(answer)
        hallucination_score, _ = hallucination_check(
            state.knowledge, final_claims, encoder,
            support_threshold=config.support_threshold,
            hallucination_threshold=config.hallucination_threshold,
        )
        rows.append({
            "id": idx,
            "query": record.query,
            "crc": crc(state.knowledge, set(record.gold_edges)),
            "ccd": ccd(state.knowledge),
            "srs": srs_best(record.query, state.refined_queries, encoder),
            "groundedness": groundedness(answer, state.knowledge, encoder),
            "context_relevance": context_relevance(record.query, state.knowledge,
                                                   encoder),
            "hallucinated": hallucination_score > config.hallucination_threshold,
            "correct": correct,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        })
    aggregate = {
        "crc": _mean([r["crc"] for r in rows]),
        "ccd": _mean([r["ccd"] for r in rows]),
        "srs": _mean([r["srs"] for r in rows]),
        "groundedness": _mean([r["groundedness"] for r in rows]),
        "context_relevance": _mean([r["context_relevance"] for r in rows]),
        "hr": _mean([1.0 if r["hallucinated"] else 0.0 for r in rows]),
        "accuracy": _mean([1.0 if r["correct"] else 0.0 for r in rows]),
        "precision": _mean([r["precision"] for r in rows]),
        "recall": _mean([r["recall"] for r in rows]),
        "f1": _mean([r["f1"] for r in rows]),
    }
    return EvalReport(stage_label=stage_label, per_query=rows, aggregate=aggregate)
