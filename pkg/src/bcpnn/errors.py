"""Exception hierarchy for the bcpnn package."""


class BcpnnError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(BcpnnError):
    """Shapes or layer geometries of two operands do not line up."""


class ValidationError(BcpnnError):
    """An input value violates a documented precondition."""


class ParameterError(BcpnnError):
    """A hyperparameter is outside its valid range."""


class ConfigError(BcpnnError):
    """Invalid or inconsistent run configuration."""


class DataError(BcpnnError):
    """Dataset contents are inconsistent or insufficient."""


class FormatError(BcpnnError):
    """A persisted file does not conform to its binary/text format."""


class DivergenceError(BcpnnError):
    """A numerical computation produced non-finite values."""
