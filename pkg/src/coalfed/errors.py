"""Exception types shared across the package."""


class CoalfedError(Exception):
    """Base class for all package errors."""


class DomainError(CoalfedError):
    """Numeric argument outside its valid domain."""


class EmptyDataError(CoalfedError):
    """Operation requires a non-empty dataset."""


class SchemaError(CoalfedError):
    """Dataset schema incompatible with the expected one."""


class ArchMismatchError(CoalfedError):
    """Model weights or init do not match the architecture fingerprint."""


class PolicyParseError(CoalfedError):
    """Malformed policy text; carries the offending position."""

    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (at position {position})")
        self.position = position


class EvaluationError(CoalfedError):
    """Type mismatch while evaluating a policy predicate."""


class UnresolvableFormatError(CoalfedError):
    """No helper service can translate a partner's declared format."""


class DeadlockError(CoalfedError):
    """Session stalled: no deliverable message and non-terminal states."""


class OutOfDomainError(CoalfedError):
    """Ensemble asked to predict outside every applicability cell."""
