"""Exception types raised across the package."""


class CausalRagError(Exception):
    """Base class for all package-specific errors."""


# --- graph ---

class SelfLoopError(CausalRagError):
    """A triple whose cause and effect normalize to the same label."""


class EmptyLabelError(CausalRagError):
    """A node label that is empty after normalization."""


class UnknownSeedError(CausalRagError):
    """A traversal seed id that is not a node of the graph."""


# --- embeddings ---

class EmptyTextError(CausalRagError):
    """Text with no encodable tokens was passed to an encoder."""


class DimensionMismatchError(CausalRagError):
    """Vectors of different dimensions were combined."""


class RemoteEncoderFailure(CausalRagError):
    """The HTTP embedding service failed or returned a bad payload."""


# --- refinement agent ---

class NonFiniteLogitsError(CausalRagError):
    """Policy network produced NaN or infinite logits."""


class ComponentOutOfRangeError(CausalRagError):
    """A reward component outside [0, 1] was passed to the reward function."""


class EmptyBatchError(CausalRagError):
    """A policy update was requested on an empty transition batch."""


class NonFiniteGradientError(CausalRagError):
    """A policy update produced NaN or infinite gradients."""


# --- retrieval ---

class TooManySubqueriesError(CausalRagError):
    """More than four subqueries were passed to a merged retrieval."""


# --- LLM client ---

class LlmFailure(CausalRagError):
    """Base class for completion-client failures (transport or format)."""


class ProviderError(LlmFailure):
    """The HTTP completion provider returned a non-200 response."""

    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


class MissingCassetteEntry(LlmFailure):
    """Strict replay saw a request fingerprint absent from the cassette."""


class TemplateUnboundError(LlmFailure):
    """A prompt template placeholder was left unbound, or the template is unknown."""


class MalformedRefinementError(LlmFailure):
    """A refinement completion violated its line-count contract."""


class ModeMisuseError(CausalRagError):
    """A generation mode was invoked without its required inputs."""
