"""Exception types shared across the package."""


class EnergyPatchTSTError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(EnergyPatchTSTError, ValueError):
    """Shapes are incompatible with the requested operation."""


class DomainError(EnergyPatchTSTError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ParameterError(EnergyPatchTSTError, ValueError):
    """An argument or hyperparameter is out of its valid range."""


class ConfigError(ParameterError):
    """An experiment or model configuration is invalid."""


class LoadError(EnergyPatchTSTError):
    """A data file or checkpoint could not be read."""


class MissingFileError(LoadError, FileNotFoundError):
    pass


class ParseError(LoadError):
    """A cell could not be parsed; carries the 1-based row and column name."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValueError(ParseError):
    pass


class TimestampError(ParseError):
    pass


class IrregularSpacingError(ParseError):
    pass


class CheckpointError(LoadError):
    pass


class TrainingError(EnergyPatchTSTError, RuntimeError):
    """Optimization produced a non-finite loss or gradient."""
