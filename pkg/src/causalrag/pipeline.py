"""The closed-loop query pipeline: refine, retrieve, generate, verify, correct.

One `Pipeline` bundles the frozen collaborators (graph, index, encoder,
client, policy) with a config. `run` executes the loop for a single query,
regenerating on failed checks until the checks pass or the iteration budget
runs out, and records every external call in an ordered history.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .agent import (
    PolicyNetwork,
    RefinementAction,
    RefinementEnvironment,
    RewardWeights,
    compute_reward,
    normalize_components,
)
from .embedding import Encoder, VectorIndex
from .errors import MalformedRefinementError
from .graph import CausalGraph
from .llm import LlmClient, refine_query
from .metrics import srs
from .retrieval import KnowledgeSet, RetrievalParams, retrieve, subquery_merge
from .verification import (
    ABSTENTION_SENTENCE,
    Decision,
    GenerationMode,
    VerificationReport,
    generate,
    verify,
)


class Status(str, Enum):
    ANSWERED = "answered"
    ABSTAINED = "abstained"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class StageFlags:
    """Which pipeline modules are active; mirrors the ablation stages.

    refinement: policy-selected query rewriting before retrieval.
    graph: causal-graph retrieval plus the causal consistency check.
    rewriter: corrective regeneration when an enabled check fails.
    hallucination_correction: the hallucination (support) check.
    """

    refinement: bool = True
    graph: bool = True
    rewriter: bool = True
    hallucination_correction: bool = True

    PRESETS = ("baseline", "refine", "graph", "rewrite", "full")

    @classmethod
    def baseline(cls) -> "StageFlags":
        return cls(refinement=False, graph=False, rewriter=False,
                   hallucination_correction=False)

    @classmethod
    def full(cls) -> "StageFlags":
        return cls()

    @classmethod
    def from_name(cls, name: str) -> "StageFlags":
        name = name.lower()
        if name == "baseline":
            return cls.baseline()
        if name == "refine":
            return cls(refinement=True, graph=False, rewriter=False,
                       hallucination_correction=False)
        if name == "graph":
            return cls(refinement=True, graph=True, rewriter=False,
                       hallucination_correction=False)
        if name == "rewrite":
            return cls(refinement=True, graph=True, rewriter=True,
                       hallucination_correction=False)
        if name == "full":
            return cls.full()
        raise ValueError(f"unknown stage preset {name!r}; "
                         f"expected one of {cls.PRESETS}")


@dataclass
class PipelineConfig:
    """All free parameters of the loop in one place, file- and flag-overridable."""

    k: int = 5
    max_hops: int = 3
    max_paths: int = 20
    alignment_threshold: float = 0.55
    max_seeds: int = 5
    causal_threshold: float = 0.6
    hallucination_threshold: float = 0.3
    support_threshold: float = 0.7
    max_iterations: int = 3
    weights: RewardWeights = field(default_factory=RewardWeights)
    stages: StageFlags = field(default_factory=StageFlags)

    def __post_init__(self):
        for name in ("alignment_threshold", "causal_threshold",
                     "hallucination_threshold", "support_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def retrieval_params(self) -> RetrievalParams:
        return RetrievalParams(
            k=self.k, max_hops=self.max_hops, max_paths=self.max_paths,
            alignment_threshold=self.alignment_threshold, max_seeds=self.max_seeds,
        )


@dataclass
class PipelineState:
    """Evolving per-query loop state plus the append-only event history."""

    raw_query: str
    action_taken: RefinementAction | None = None
    refined_queries: list[str] = field(default_factory=list)
    knowledge: KnowledgeSet = field(default_factory=KnowledgeSet)
    draft: str | None = None
    report: VerificationReport | None = None
    iteration: int = 0
    history: list[tuple[str, str]] = field(default_factory=list)
    status: Status | None = None

    def record(self, stage: str, summary: str) -> None:
        self.history.append((stage, summary))

    def to_dict(self) -> dict:
        return {
            "raw_query": self.raw_query,
            "action_taken": self.action_taken.label if self.action_taken else None,
            "refined_queries": list(self.refined_queries),
            "knowledge": self.knowledge.to_dict(),
            "draft": self.draft,
            "report": self.report.to_dict() if self.report else None,
            "iteration": self.iteration,
            "history": [list(event) for event in self.history],
            "status": self.status.value if self.status else None,
        }


class Pipeline:
    """Frozen collaborators plus config; `run` is the whole loop."""

    def __init__(self, *, graph: CausalGraph | None, index: VectorIndex | None,
                 encoder: Encoder, client: LlmClient,
                 policy: PolicyNetwork | None = None,
                 config: PipelineConfig | None = None):
        self.graph = graph
        self.index = index
        self.encoder = encoder
        self.client = client
        self.policy = policy
        self.config = config or PipelineConfig()

    # --- stages ---

    def _refine(self, state: PipelineState) -> list[str]:
        query = state.raw_query
        if self.policy is None:
            state.record("refine", "no policy loaded; using original query")
            return [query]
        action, _ = self.policy.act(self.encoder.encode(query))
        state.action_taken = action
        try:
            refined = refine_query(self.client, query, action)
        except MalformedRefinementError as exc:
            state.record("refine", f"{action.label}: malformed ({exc}); using original")
            return [query]
        except Exception as exc:
            state.record("refine", f"{action.label}: error: {exc}")
            raise
        state.record("refine", f"{action.label} -> {len(refined)} queries")
        return refined

    def _retrieve(self, state: PipelineState, queries: list[str],
                  config: PipelineConfig) -> KnowledgeSet:
        graph = self.graph if config.stages.graph else None
        params = config.retrieval_params()
        try:
            if len(queries) == 1:
                knowledge = retrieve(queries[0], graph, self.index, self.encoder,
                                     params)
            else:
                knowledge = subquery_merge(queries, graph, self.index, self.encoder,
                                           params)
        except Exception as exc:
            state.record("retrieve", f"error: {exc}")
            raise
        state.record("retrieve",
                     f"{len(knowledge.semantic_items())} semantic, "
                     f"{len(knowledge.path_items())} causal paths")
        return knowledge

    def _generate(self, state: PipelineState, mode: GenerationMode,
                  draft: str | None = None,
                  unsupported: list[str] | None = None) -> str:
        try:
            text = generate(self.client, state.raw_query, state.knowledge, mode,
                            draft=draft, unsupported_claims=unsupported)
        except Exception as exc:
            state.record("generate", f"{mode.value}: error: {exc}")
            raise
        state.record("generate", mode.value)
        return text

    def _verify(self, state: PipelineState, draft: str,
                config: PipelineConfig) -> VerificationReport:
        stages = config.stages
        report = verify(
            self.graph, state.knowledge, draft, self.encoder,
            causal_threshold=config.causal_threshold,
            hallucination_threshold=config.hallucination_threshold,
            support_threshold=config.support_threshold,
            max_hops=config.max_hops,
            check_causal=stages.graph,
            check_hallucination=stages.hallucination_correction,
        )
        if stages.graph:
            passed = report.causal_score >= config.causal_threshold
            state.record("causal_check",
                         f"score={report.causal_score:.4f} "
                         f"{'pass' if passed else 'fail'}")
        if stages.hallucination_correction:
            passed = report.hallucination_score <= config.hallucination_threshold
            state.record("hallucination_check",
                         f"score={report.hallucination_score:.4f} "
                         f"{'pass' if passed else 'fail'}")
        return report

    # --- the loop ---

    def run(self, query: str, stages: StageFlags | None = None
            ) -> tuple[str, PipelineState]:
        """Answer one query; returns the answer and the full loop state.

        Regeneration follows the decision priority rewrite-then-fallback and
        stops after `max_iterations` generation rounds; when the budget runs
        out the best draft by (causal score desc, hallucination score asc)
        is returned with status exhausted.
        """
        if not query.strip():
            raise ValueError("query must be non-empty")
        config = self.config if stages is None else replace(self.config, stages=stages)
        state = PipelineState(raw_query=query)

        queries = self._refine(state) if config.stages.refinement else [query]
        state.refined_queries = queries
        state.knowledge = self._retrieve(state, queries, config)

        draft = self._generate(state, GenerationMode.NORMAL)
        state.iteration = 1
        candidates: list[tuple[str, VerificationReport]] = []

        while True:
            report = self._verify(state, draft, config)
            state.draft = draft
            state.report = report
            candidates.append((draft, report))
            if draft.strip().lower() == ABSTENTION_SENTENCE:
                # abstaining is the sanctioned way out; never rewrite it
                state.status = Status.ABSTAINED
                return draft, state
            if report.decision is Decision.ACCEPT or not config.stages.rewriter:
                state.status = Status.ANSWERED
                return draft, state
            if state.iteration >= config.max_iterations:
                best_draft, best_report = min(
                    candidates,
                    key=lambda c: (-c[1].causal_score, c[1].hallucination_score),
                )
                state.draft = best_draft
                state.report = best_report
                state.status = Status.EXHAUSTED
                state.record("exhausted",
                             f"budget spent after {state.iteration} rounds")
                return best_draft, state
            if report.decision is Decision.REWRITE:
                unsupported = [c.text for c in report.unsupported_claims()]
                state.record("rewrite", f"{len(unsupported)} unsupported claims")
                draft = self._generate(state, GenerationMode.REWRITE, draft=draft,
                                       unsupported=unsupported)
            else:
                state.record("fallback", "regenerating under strict grounding")
                draft = self._generate(state, GenerationMode.STRICT)
            state.iteration += 1


class RetrievalSurrogateEnvironment(RefinementEnvironment):
    """Training environment that scores actions with retrieval-side signals only.

    Each reset picks a query and exposes its embedding as the state. A step
    applies a cheap deterministic rewrite for the chosen action, reruns
    retrieval, and mixes relevance, causal depth, and similarity into the
    composite reward (no generation, so the hallucination component is 0).
    """

    def __init__(self, queries: list[str], *, graph: CausalGraph | None,
                 index: VectorIndex | None, encoder: Encoder,
                 config: PipelineConfig | None = None, seed: int = 0):
        if not queries:
            raise ValueError("need at least one query")
        self.queries = list(queries)
        self.graph = graph
        self.index = index
        self.encoder = encoder
        self.config = config or PipelineConfig()
        self._rng = np.random.default_rng(seed)
        self._current: str | None = None

    def reset(self) -> np.ndarray:
        self._current = self.queries[int(self._rng.integers(len(self.queries)))]
        return self.encoder.encode(self._current)

    def _rewrite(self, query: str, action: RefinementAction) -> list[str]:
        tokens = query.split()
        if action is RefinementAction.SIMPLIFY:
            kept = [t for t in tokens if len(t) > 3] or tokens
            return [" ".join(kept)]
        if action is RefinementAction.EXPAND:
            extra = ""
            if self.graph is not None and self.graph.nodes:
                seeds = self.graph.align_query(
                    self.encoder.encode(query), tokens,
                    self.config.alignment_threshold, max_seeds=2)
                extra = " ".join(seeds)
            return [(query + " " + extra).strip()]
        half = max(1, len(tokens) // 2)
        first, second = " ".join(tokens[:half]), " ".join(tokens[half:])
        return [q for q in (first, second) if q] or [query]

    def step(self, action: RefinementAction) -> float:
        assert self._current is not None, "step before reset"
        query = self._current
        rewritten = self._rewrite(query, action)
        if len(rewritten) == 1:
            knowledge = retrieve(rewritten[0], self.graph, self.index, self.encoder,
                                 self.config.retrieval_params())
        else:
            knowledge = subquery_merge(rewritten, self.graph, self.index,
                                       self.encoder, self.config.retrieval_params())
        semantic = knowledge.semantic_items()
        relevance = (sum(i.score for i in semantic) / len(semantic)) if semantic else 0.0
        hops = [i.path.hops for i in knowledge.path_items()]
        depth = sum(hops) / len(hops) if hops else 0.0
        similarity = max(srs(query, q, self.encoder) for q in rewritten)
        parts = normalize_components(relevance, depth, similarity, 0.0,
                                     max_hops=self.config.max_hops)
        return compute_reward(self.config.weights, parts["relevance"],
                              parts["causal_depth"], parts["similarity"],
                              parts["hallucination"])
