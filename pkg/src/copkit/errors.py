"""Exception hierarchy shared across copkit.

Input problems (bad files, unknown ids, malformed model output) derive from
``CopkitInputError`` so the CLI can map them to exit code 2.
"""


class CopkitError(Exception):
    """Base class for all copkit errors."""


class CopkitInputError(CopkitError):
    """Raised for problems with user-supplied data or configuration."""


# core-model
class NoStepLabel(CopkitError):
    """No line of the text matches the ``step_<n>: ...`` grammar."""


class IndexOutOfRange(CopkitError):
    pass


class CannotShuffle(CopkitError):
    pass


# embedding-store
class DimensionMismatch(CopkitInputError):
    pass


class ZeroVector(CopkitError):
    pass


class UnknownId(CopkitInputError):
    pass


class ParseError(CopkitInputError):
    pass


class MissingEmbedding(CopkitInputError):
    pass


# model-gateway
class GatewayError(CopkitError):
    pass


class TransportError(GatewayError):
    """Retryable failure talking to a provider."""


class ProviderRefusal(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class CacheIOError(GatewayError):
    pass


# dataset-forge
class InsufficientPool(CopkitError):
    pass


# cop-pipeline
class UnparseableSelection(CopkitError):
    pass


class UnparseableCurrentStep(CopkitError):
    pass


# eval-metrics
class LengthMismatch(CopkitInputError):
    pass


class UnparseableJudgeScore(CopkitError):
    pass


class AllJudgesFailed(CopkitError):
    pass


class DegenerateAgreement(CopkitError):
    pass


class UnknownGroupKey(CopkitInputError):
    pass


class JoinMismatch(CopkitInputError):
    def __init__(self, missing_results, missing_gold):
        self.missing_results = sorted(missing_results)
        self.missing_gold = sorted(missing_gold)
        super().__init__(
            f"results/gold do not join: {len(self.missing_results)} gold ids without results "
            f"{self.missing_results[:10]}, {len(self.missing_gold)} result ids without gold "
            f"{self.missing_gold[:10]}"
        )
