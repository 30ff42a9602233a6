"""Answer generation, claim extraction, and the two consistency checks.

The causal check scores how many causal claims asserted in an answer are
entailed by the graph; the hallucination check scores how many claims are
supported by the retrieved knowledge. Both checks are deterministic and
offline; their thresholds decide whether the pipeline regenerates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .embedding import Encoder, cosine
from .errors import ModeMisuseError
from .graph import CausalGraph
from .llm import CompletionRequest, LlmClient
from .retrieval import KnowledgeSet, render_knowledge
from .text import normalize_label, split_sentences

ABSTENTION_SENTENCE = "insufficient retrieved evidence"

# (connective, passive) - passive connectives put the cause on the right.
# Ordered longest-first so compound connectives win over their substrings.
_CONNECTIVES = (
    ("increases the risk of", False),
    ("contributes to", False),
    ("caused by", True),
    ("results in", False),
    ("leads to", False),
    ("lead to", False),
    ("due to", True),
    ("because", True),
    ("causes", False),
    ("cause", False),
)
_CONNECTIVE_RES = [(re.compile(rf"\b{re.escape(c)}\b"), passive)
                   for c, passive in _CONNECTIVES]
_EDGE_AUXILIARIES = {"is", "are", "was", "were", "be", "been", "being"}


class Decision(str, Enum):
    ACCEPT = "accept"
    FALLBACK = "fallback"
    REWRITE = "rewrite"


class GenerationMode(str, Enum):
    NORMAL = "normal"
    STRICT = "strict"
    REWRITE = "rewrite"


@dataclass
class Claim:
    """One sentence of an answer, with causal spans when a connective matched."""

    text: str
    cause_span: str | None = None
    effect_span: str | None = None
    is_causal: bool = False

    def __post_init__(self):
        if self.is_causal and not (self.cause_span and self.effect_span):
            raise ValueError("causal claims need both spans")


@dataclass
class VerificationReport:
    causal_score: float
    hallucination_score: float
    per_relation: list[tuple[str, str, bool]] = field(default_factory=list)
    per_claim: list[tuple[Claim, bool]] = field(default_factory=list)
    decision: Decision = Decision.ACCEPT
    relation_coverage: float = 1.0

    def unsupported_claims(self) -> list[Claim]:
        return [claim for claim, supported in self.per_claim if not supported]

    def to_dict(self) -> dict:
        return {
            "causal_score": self.causal_score,
            "hallucination_score": self.hallucination_score,
            "relation_coverage": self.relation_coverage,
            "decision": self.decision.value,
            "per_relation": [list(row) for row in self.per_relation],
            "per_claim": [{"text": c.text, "is_causal": c.is_causal,
                           "supported": supported}
                          for c, supported in self.per_claim],
        }


def _clean_span(raw: str) -> str:
    tokens = normalize_label(raw).split()
    while tokens and tokens[0] in _EDGE_AUXILIARIES:
        tokens.pop(0)
    while tokens and tokens[-1] in _EDGE_AUXILIARIES:
        tokens.pop()
    return " ".join(tokens)


def extract_claims(answer: str) -> list[Claim]:
    """Split an answer into sentence claims and tag the causal ones.

    A sentence is causal when it contains one of the fixed connectives; the
    spans are the cleaned text on each side, swapped for passive forms
    ("caused by", "due to", "because").
    """
    claims = []
    for sentence in split_sentences(answer):
        lowered = sentence.lower()
        claim = Claim(text=sentence.strip())
        for pattern, passive in _CONNECTIVE_RES:
            match = pattern.search(lowered)
            if not match:
                continue
            left = _clean_span(lowered[:match.start()])
            right = _clean_span(lowered[match.end():])
            if left and right:
                cause, effect = (right, left) if passive else (left, right)
                claim = Claim(text=sentence.strip(), cause_span=cause,
                              effect_span=effect, is_causal=True)
            break
        claims.append(claim)
    return claims


def causal_check(graph: CausalGraph, claims: list[Claim], causal_threshold: float = 0.6,
                 max_hops: int = 3,
                 entails_fn: Callable[[str, str], bool] | None = None,
                 ) -> tuple[float, Decision]:
    """Fraction of asserted causal claims entailed by the graph.

    An answer with no causal claims scores 1.0 (nothing to contradict).
    Scores below the threshold map to a fallback decision. `entails_fn`
    swaps in a different entailment judge (for example `llm_entails`).
    """
    if not 0.0 <= causal_threshold <= 1.0:
        raise ValueError("causal_threshold must be in [0, 1]")
    rows = relation_checks(graph, claims, max_hops, entails_fn)
    score = 1.0 if not rows else sum(e for _, _, e in rows) / len(rows)
    decision = Decision.FALLBACK if score < causal_threshold else Decision.ACCEPT
    return score, decision


def relation_checks(graph: CausalGraph, claims: list[Claim], max_hops: int = 3,
                    entails_fn: Callable[[str, str], bool] | None = None,
                    ) -> list[tuple[str, str, bool]]:
    """Per causal claim: (cause span, effect span, entailed)."""
    if entails_fn is None:
        entails_fn = lambda cause, effect: graph.entails(cause, effect, max_hops)
    return [
        (c.cause_span, c.effect_span, entails_fn(c.cause_span, c.effect_span))
        for c in claims if c.is_causal
    ]


def llm_entails(client: LlmClient, cause: str, effect: str, *,
                domain: str = "general", dataset: str = "",
                source_model: str = "") -> bool:
    """LLM-judge entailment through the shipped verification prompt.

    Parses the "Correctness:" line of the completion; anything that is not
    a clear True counts as not entailed.
    """
    request = CompletionRequest(
        template_name="causal_verification",
        variables={"domain": domain, "dataset": dataset,
                   "source_model": source_model, "cause": cause,
                   "effect": effect},
        temperature=0.0,
    )
    text = client.complete(request)
    match = re.search(r"correctness:\s*(true|false)", text.lower())
    return bool(match and match.group(1) == "true")


def _claim_supported(claim: Claim, knowledge: KnowledgeSet, encoder: Encoder,
                     support_threshold: float,
                     item_embeddings: list | None = None) -> bool:
    normalized = normalize_label(claim.text)
    for item in knowledge.items:
        if normalized and normalized in normalize_label(item.rendered_text):
            return True
    if item_embeddings is None:
        item_embeddings = [encoder.encode(i.rendered_text) for i in knowledge.items]
    if not normalized:
        return False
    claim_embedding = encoder.encode(claim.text)
    return any(cosine(claim_embedding, emb) >= support_threshold
               for emb in item_embeddings)


def hallucination_check(knowledge: KnowledgeSet, claims: list[Claim], encoder: Encoder,
                        support_threshold: float = 0.7,
                        hallucination_threshold: float = 0.3) -> tuple[float, Decision]:
    """Fraction of claims unsupported by the retrieved knowledge.

    A claim counts as supported when its normalized text is a substring of
    some item's rendered text, or its embedding reaches the support
    threshold against some item. No claims at all scores 0.0. Scores above
    the threshold map to a rewrite decision.
    """
    if not 0.0 <= hallucination_threshold <= 1.0:
        raise ValueError("hallucination_threshold must be in [0, 1]")
    if not claims:
        return 0.0, Decision.ACCEPT
    item_embeddings = [encoder.encode(i.rendered_text) for i in knowledge.items]
    supported = sum(
        _claim_supported(c, knowledge, encoder, support_threshold, item_embeddings)
        for c in claims)
    score = 1.0 - supported / len(claims)
    decision = (Decision.REWRITE if score > hallucination_threshold
                else Decision.ACCEPT)
    return score, decision


def relation_coverage(graph: CausalGraph, knowledge: KnowledgeSet,
                      claims: list[Claim]) -> float:
    """Secondary reading of the causal score: fraction of retrieved causal
    relations that the answer asserts. 1.0 when nothing causal was retrieved."""
    retrieved_edges: set[tuple[str, str]] = set()
    for item in knowledge.path_items():
        nodes = item.path.nodes
        retrieved_edges.update(zip(nodes, nodes[1:]))
    if not retrieved_edges:
        return 1.0
    asserted = {(c.cause_span, c.effect_span) for c in claims if c.is_causal}
    covered = sum(edge in asserted for edge in retrieved_edges)
    return covered / len(retrieved_edges)


def verify(graph: CausalGraph | None, knowledge: KnowledgeSet, answer: str,
           encoder: Encoder, *, causal_threshold: float = 0.6,
           hallucination_threshold: float = 0.3, support_threshold: float = 0.7,
           max_hops: int = 3, check_causal: bool = True,
           check_hallucination: bool = True) -> VerificationReport:
    """Run the enabled checks on an answer and fold them into one report.

    The rewrite decision (hallucination) takes priority over fallback
    (causal) because rewriting may fix both problems at once. A disabled
    check contributes its vacuous score.
    """
    claims = extract_claims(answer)

    per_relation: list[tuple[str, str, bool]] = []
    causal_score = 1.0
    coverage = 1.0
    if check_causal and graph is not None:
        per_relation = relation_checks(graph, claims, max_hops)
        causal_score = (1.0 if not per_relation
                        else sum(e for _, _, e in per_relation) / len(per_relation))
        coverage = relation_coverage(graph, knowledge, claims)

    per_claim: list[tuple[Claim, bool]] = []
    hallucination_score = 0.0
    if check_hallucination:
        item_embeddings = [encoder.encode(i.rendered_text) for i in knowledge.items]
        per_claim = [
            (c, _claim_supported(c, knowledge, encoder, support_threshold,
                                 item_embeddings))
            for c in claims
        ]
        if per_claim:
            supported = sum(s for _, s in per_claim)
            hallucination_score = 1.0 - supported / len(per_claim)

    if check_hallucination and hallucination_score > hallucination_threshold:
        decision = Decision.REWRITE
    elif check_causal and graph is not None and causal_score < causal_threshold:
        decision = Decision.FALLBACK
    else:
        decision = Decision.ACCEPT

    return VerificationReport(
        causal_score=causal_score,
        hallucination_score=hallucination_score,
        per_relation=per_relation,
        per_claim=per_claim,
        decision=decision,
        relation_coverage=coverage,
    )


def generate(client: LlmClient, query: str, knowledge: KnowledgeSet,
             mode: GenerationMode = GenerationMode.NORMAL, *,
             draft: str | None = None, unsupported_claims: list[str] | None = None,
             temperature: float = 0.3, knowledge_char_limit: int = 4000) -> str:
    """Produce an answer draft for the given mode.

    Normal cites the knowledge; strict instructs the model to assert only
    retrieved relations (and to abstain on empty evidence); rewrite passes
    the prior draft plus the unsupported claims for revision and therefore
    requires both.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    variables = {
        "query": query,
        "knowledge": render_knowledge(knowledge, knowledge_char_limit),
    }
    if mode is GenerationMode.REWRITE:
        if draft is None or not unsupported_claims:
            raise ModeMisuseError("rewrite mode needs a draft and unsupported claims")
        variables["draft"] = draft
        variables["unsupported_claims"] = "\n".join(f"- {c}" for c in unsupported_claims)
    request = CompletionRequest(
        template_name=f"generate_{mode.value}",
        variables=variables,
        temperature=temperature,
    )
    return client.complete(request)
