"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, ParseError and
DataError -> 2, NumericalError -> 3.
"""


class GeoGnnError(Exception):
    pass


class ShapeError(GeoGnnError):
    """Tensor operands with incompatible shapes."""


class NumericalError(GeoGnnError):
    """Non-finite values or numerically undefined operations."""


class ParseError(GeoGnnError):
    """Malformed input file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(GeoGnnError):
    """Structurally valid input that violates a domain invariant."""


class ConfigError(GeoGnnError):
    """Invalid or inconsistent configuration."""
