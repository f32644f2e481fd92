"""Exception hierarchy shared across the package."""


class CoevoError(Exception):
    """Base class for all package errors."""


class ConfigError(CoevoError):
    """Invalid or inconsistent configuration (exit code 2 at the CLI)."""


class ProviderError(CoevoError):
    """Completion provider failed (exit code 3 at the CLI)."""


class AuthError(ProviderError):
    """Non-retryable authentication failure."""


class RetriesExhausted(ProviderError):
    """Transient provider failures persisted past the retry budget."""


class ParseFailure(CoevoError):
    """Provider output could not be parsed into a usable payload.

    Operator invocations treat this as retryable.
    """


class InapplicableOperator(CoevoError):
    """The chosen operator cannot run against the current populations.

    Not an error condition for the run: the engine reselects an operator
    and tries again within its attempt budget.
    """


class ExecutorError(CoevoError):
    """Host-level execution failure, e.g. a missing interpreter (exit code 4).

    Distinct from a candidate program failing: candidate failures are
    observations, executor errors abort the run.
    """


class MatrixIncompleteError(CoevoError):
    """The observation matrix is missing an entry for a live pair."""


class InitializationError(ProviderError):
    """Population bootstrap produced zero parsable candidates.

    Subclass of ProviderError: the run never got a usable population out
    of the provider, so it maps to the same exit code.
    """


class CorruptLogError(CoevoError):
    """A run log failed to parse or its digest does not match (exit code 5)."""
