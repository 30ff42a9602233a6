"""Causally grounded retrieval-augmented generation engine.

Building blocks: a directed causal triple graph with multi-hop traversal, a
pluggable embedding index with exact top-k search, a PPO-trained query
refinement policy, dual-path retrieval, answer verification (causal
consistency and hallucination checks) with corrective regeneration, and an
evaluation harness for stage-wise ablations.
"""

from .agent import (
    BanditEnvironment,
    PolicyNetwork,
    PolicySnapshot,
    PpoConfig,
    RefinementAction,
    RewardWeights,
    Transition,
    compute_reward,
    normalize_components,
    ppo_update,
    train,
)
from .embedding import (
    DIMENSION,
    HashingEncoder,
    HttpEncoder,
    Passage,
    VectorIndex,
    build_index,
    cosine,
    load_index,
    load_passages,
    save_index,
)
from .graph import (
    CausalGraph,
    CausalNode,
    CausalPath,
    CausalTriple,
    load_triples,
    save_triples,
)
from .llm import (
    Cassette,
    ChatProviderClient,
    CompletionRequest,
    HttpProviderClient,
    MockClient,
    RecordingClient,
    ReplayClient,
    client_from_env,
    refine_query,
)
from .metrics import (
    EvalReport,
    GoldRecord,
    answer_correct,
    ccd,
    context_relevance,
    crc,
    groundedness,
    load_gold,
    run_eval,
    srs,
)
from .pipeline import (
    Pipeline,
    PipelineConfig,
    PipelineState,
    RetrievalSurrogateEnvironment,
    StageFlags,
    Status,
)
from .retrieval import (
    KnowledgeItem,
    KnowledgeSet,
    Origin,
    RetrievalParams,
    render_knowledge,
    render_path,
    retrieve,
    subquery_merge,
)
from .verification import (
    ABSTENTION_SENTENCE,
    Claim,
    Decision,
    GenerationMode,
    VerificationReport,
    causal_check,
    extract_claims,
    generate,
    hallucination_check,
    llm_entails,
    verify,
)

__version__ = "0.1.0"
