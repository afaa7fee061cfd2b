"""Exception hierarchy shared by the library and the CLI."""


class BinMRFError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(BinMRFError, ValueError):
    """Bad input, configuration, or state."""

    exit_code = 2


class TemplateTooLargeError(ValidationError):
    """Template bounding box does not fit in the lattice."""


class NotASubshapeError(ValidationError):
    """On-set is not a translate of a subset of the template."""


class WrongCatalogError(ValidationError):
    """Operation requires a catalog built for a different template."""


class CapExceededError(BinMRFError):
    """A computational size cap was hit (enumeration, transfer height, ...)."""

    exit_code = 3


class EngineError(BinMRFError):
    """A likelihood engine failed to produce a value."""

    exit_code = 3


class DataIOError(BinMRFError, OSError):
    """Reading or writing a data file failed."""

    exit_code = 4
