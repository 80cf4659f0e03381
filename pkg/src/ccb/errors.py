"""Exception hierarchy shared across the package."""


class CCBError(Exception):
    """Base class for all package errors."""


class SchemaViolation(CCBError):
    """A statement file does not conform to the statement-file schema."""


class NumberFormat(CCBError, ValueError):
    """Numeric text could not be parsed into an exact decimal."""


class SchemaParse(CCBError):
    """A phase-1 schema block is malformed beyond recovery."""


class InvalidRange(CCBError, ValueError):
    pass


class EmptyInput(CCBError, ValueError):
    pass


class BackendError(CCBError):
    """Transport-level failure talking to a language model backend.

    ``trace`` is populated by the correction loop when the failure happens
    mid-iteration so callers can inspect the partial run.
    """

    def __init__(self, message: str, *, trace=None):
        super().__init__(message)
        self.trace = trace


class TranscriptMiss(BackendError):
    """A scripted backend was asked a prompt it has no recorded reply for."""

    def __init__(self, prompt_key: str):
        super().__init__(f"no transcript entry for prompt key {prompt_key}")
        self.prompt_key = prompt_key
