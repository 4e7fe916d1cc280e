"""Exception hierarchy shared by the library and the CLI."""


class LocdepError(Exception):
    """Base class for all library errors."""


class DataError(LocdepError, ValueError):
    """Malformed partition, edge list, or config input."""


class ModelError(LocdepError, ValueError):
    """Invalid model specification or incompatible partition."""


class EnumerationCapError(ModelError):
    """A subgraph has more edge variables than the enumeration cap allows."""


class NumericalError(LocdepError, ArithmeticError):
    """Singular matrices, non-PSD input, and similar numerical failures."""
