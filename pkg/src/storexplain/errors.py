"""Exception hierarchy shared across the package."""


class StorexplainError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(StorexplainError, ValueError):
    """An argument value is outside its documented range."""


class ContractError(StorexplainError, ValueError):
    """A call violated an API precondition (shape mismatch, wrong keys, ...)."""


class ValidationError(StorexplainError, ValueError):
    """A data structure violates one of its invariants."""


class DatasetFormatError(ValidationError):
    """A dataset file could not be parsed or validated."""


class InfeasibleParamsError(ParameterError):
    """A (delta_mu, alpha) pair admits no valid mean range in [0, 1].

    ``min_feasible_alpha`` is the largest alpha that would make the pair
    feasible at the requested delta_mu.
    """

    def __init__(self, message: str, min_feasible_alpha: float):
        super().__init__(message)
        self.min_feasible_alpha = min_feasible_alpha


class SamplingError(StorexplainError, RuntimeError):
    """A rejection sampler exhausted its retry budget."""


class PipelineError(StorexplainError, RuntimeError):
    """An iterative run aborted; ``history`` holds the completed iterations."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = history
