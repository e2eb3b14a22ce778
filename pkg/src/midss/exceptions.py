"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Grids with incompatible shapes were combined."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class ParseError(ValueError):
    """A file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NumericalIntegrityError(ArithmeticError):
    """A numerical result is outside what a correct computation can produce."""


class TrainingIntegrityError(NumericalIntegrityError):
    """A loss term became non-finite during training."""

    def __init__(self, term, value):
        super().__init__(f"loss term {term!r} is not finite: {value!r}")
        self.term = term
        self.value = value


class ArchitectureMismatchError(ValueError):
    """A checkpoint does not match the requested network architecture."""
