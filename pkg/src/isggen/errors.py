"""Exception types shared across the package."""


class IsggenError(Exception):
    """Base class for all package errors."""


class ValidationError(IsggenError):
    """A value violates a documented invariant or precondition."""


class ParseError(ValidationError):
    """A document does not match its schema; message names the offending field."""


class ConfigError(IsggenError):
    """Configuration is missing, contradictory, or incompatible."""


class DataError(IsggenError):
    """Dataset input is missing or malformed."""


class NumericError(IsggenError):
    """A numeric failure (non-finite loss, unmet accuracy gate)."""
