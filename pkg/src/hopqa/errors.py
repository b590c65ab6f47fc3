"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
ProviderError -> 3. Everything else is a plain bug and propagates.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EngineError):
    """Invalid configuration or invalid arguments to a public operation."""


class DataError(EngineError):
    """A problem with input data: corpora, datasets, traces, snapshots."""


class CorpusError(DataError):
    """Corpus file is malformed or violates corpus invariants."""


class DatasetError(DataError):
    """Evaluation dataset is malformed or violates dataset invariants."""


class TraceError(DataError):
    """A recorded trace file could not be parsed or failed validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SnapshotError(DataError):
    """Index snapshot is unreadable, wrong version, or stale."""


class InvalidExampleError(DataError):
    """A QA example violates metric preconditions (e.g. no gold answers)."""


class ProviderError(EngineError):
    """A generation backend failed."""


class TraceExhaustedError(ProviderError):
    """The replay trace has no more records for this generate call."""


class BackendUnreachableError(ProviderError):
    """The live backend could not be reached (after retries)."""


class ProtocolError(ProviderError):
    """The backend answered with something outside the wire contract."""


class SignalError(EngineError, ValueError):
    """Invalid token-signal input (distribution, weight, or empty segment)."""


class InvalidDistributionError(SignalError):
    pass


class InvalidWeightError(SignalError):
    pass


class EmptySegmentError(SignalError):
    pass


class MissingSpanError(EngineError, ValueError):
    """Entity has no token span but the operation requires one."""
