"""Exception types. Every error carries a stable kebab-case ``code``."""


class TrustFedError(ValueError):
    code = "trustfed-error"

    def __init__(self, message: str = "", code: str | None = None):
        if code is not None:
            self.code = code
        super().__init__(f"{self.code}: {message}" if message else self.code)


class InsufficientHistory(TrustFedError):
    code = "insufficient-history"


class TooManyClusters(TrustFedError):
    code = "too-many-clusters"


class InconsistentCounters(TrustFedError):
    code = "inconsistent-counters"


class ContextSchemaMismatch(TrustFedError):
    code = "context-schema-mismatch"


class EmptyTrainingSet(TrustFedError):
    code = "empty-training-set"


class NoFeasibleSolution(TrustFedError):
    code = "no-feasible-solution"


class EmptyDataset(TrustFedError):
    code = "empty-dataset"


class ShapeMismatch(TrustFedError):
    code = "shape-mismatch"


class UnknownBehavior(TrustFedError):
    code = "unknown-behavior"


class InvalidSpec(TrustFedError):
    code = "invalid-spec"


class TraceFormatError(TrustFedError):
    code = "trace-format"


class ConfigError(TrustFedError):
    code = "invalid-config"
