"""Exception types shared across the package."""


class PsbcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PsbcError):
    """Inconsistent hyperparameters or an unsupported option combination."""


class DimensionError(PsbcError):
    """Operands whose shapes do not conform."""


class DomainError(PsbcError):
    """Input outside the domain an operation is defined on."""


class PropagationError(PsbcError):
    """Forward propagation produced a non-finite value."""


class IdxParseError(PsbcError):
    """Malformed IDX container.  Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ModelFormatError(PsbcError):
    """Model file that cannot be loaded; names the offending field."""

    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{message} (field '{field}')"
        super().__init__(message)
        self.field = field
