"""Exception hierarchy shared across the package."""


class SPNError(Exception):
    """Base class for all package errors."""


class StructuralError(SPNError):
    """Malformed net, unknown identifier or mismatched array shape."""


class ContractError(SPNError):
    """An operation was called outside its precondition (e.g. firing a disabled transition)."""


class ConfigurationError(SPNError):
    """Missing rate binding, empty patch, inconsistent config."""


class IngestionError(SPNError):
    """Input data is present but unusable (a field is entirely missing, bad schema)."""


class ValidationError(SPNError, ValueError):
    """Argument outside its documented domain."""


class NumericError(SPNError, ArithmeticError):
    """Negative/NaN hazard, non-finite activation or loss."""


class LoadError(SPNError):
    """A persisted artifact failed its integrity checks."""


class GenerationError(SPNError):
    """Too many samples failed during dataset generation."""
