"""Exception types shared across the toolkit."""


class RQAError(Exception):
    """Base class for all toolkit errors."""


class EmptyCorpus(RQAError):
    """Raised when an operation needs at least one document or passage."""


class SchemaViolation(RQAError):
    """Raised when an input record is missing required fields or malformed."""


class LoadError(RQAError):
    """Raised when a persisted artifact cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class InsufficientCorpus(RQAError):
    """Raised when more passages are requested than the store holds."""


class InsufficientData(RQAError):
    """Raised when a dataset split request cannot be satisfied."""


class UnknownPassage(RQAError):
    """Raised when a passage id does not resolve against the store."""


class GenerationBackendError(RQAError):
    """Raised when an LLM backend fails (after retries, where applicable)."""


class EmptyQuery(RQAError):
    """Raised when a retrieval query is empty."""


class DimensionMismatch(RQAError):
    """Raised when embedding dimensions do not agree."""


class IdentityMismatch(RQAError):
    """Raised when an index was built with a different embedder."""


class NumericalError(RQAError):
    """Raised on non-finite values in numerical routines."""


class ShapeError(RQAError):
    """Raised when tensor shapes and boundary maps disagree."""


class ConfigError(RQAError):
    """Raised on invalid or incompatible configuration."""


class BudgetError(RQAError):
    """Raised when a token budget cannot fit the mandatory prompt parts."""


class EmptyContinuation(RQAError):
    """Raised when a log-likelihood is requested for an empty continuation."""


class MissingKeyError(RQAError):
    """Raised when a pipeline component requests a state key that is absent."""

    def __init__(self, component: str, key: str):
        super().__init__(f"component {component!r} requested missing state key {key!r}")
        self.component = component
        self.key = key


class PipelineError(RQAError):
    """Wraps an exception raised inside a pipeline component."""

    def __init__(self, component_index: int, component: str, cause: BaseException):
        super().__init__(f"component #{component_index} ({component}) failed: {cause}")
        self.component_index = component_index
        self.component = component
        self.cause = cause


class JudgeParseError(RQAError):
    """Raised when a judge response has no parseable verdict line."""


class EmptyEvalSet(RQAError):
    """Raised when an evaluation is requested over zero records."""
