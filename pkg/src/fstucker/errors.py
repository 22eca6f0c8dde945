"""Exception hierarchy shared by all fstucker modules."""


class FSTuckerError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(FSTuckerError, ValueError):
    """An argument is outside its admissible range."""


class ModeIndexError(ParameterError, IndexError):
    """A mode index does not address an existing tensor mode."""


class ShapeError(FSTuckerError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class DegenerateInputError(FSTuckerError, ValueError):
    """Input has zero norm or is otherwise degenerate."""


class DataError(FSTuckerError, ValueError):
    """Input data contains non-finite values."""


class DomainError(FSTuckerError, ValueError):
    """A coordinate lies outside the domain of a basis or model."""


class DecodeError(FSTuckerError, ValueError):
    """A binary file is corrupt, truncated or of an unsupported version."""
