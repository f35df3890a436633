"""Exception types shared across the package."""


class PhotostatsError(Exception):
    """Base class for all package errors."""


class ValidationError(PhotostatsError, ValueError):
    """Invalid parameters or configuration."""


class StreamCorruptionError(PhotostatsError):
    """A sample stream contains non-finite values or a malformed file."""


class TruncationError(PhotostatsError):
    """Truncated Fock-space computation leaks probability past the cutoff."""

    def __init__(self, message, suggested_n_trunc=None):
        super().__init__(message)
        self.suggested_n_trunc = suggested_n_trunc


class ConvergenceError(PhotostatsError):
    """An iterative or extrapolated computation did not converge."""


class DomainError(ValidationError):
    """Argument outside the domain where a function is defined or real."""


class OracleMismatch(PhotostatsError):
    """Two routes to the same exact quantity disagree beyond tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
