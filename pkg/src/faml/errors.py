"""Exception hierarchy shared across the package."""


class FamlError(Exception):
    """Base class for all package errors."""


class DimensionError(FamlError, ValueError):
    """Arrays whose lengths or shapes must agree do not."""


class NumericError(FamlError, ArithmeticError):
    """Non-finite input or an evaluation that produced NaN/inf."""


class DomainError(NumericError):
    """Argument outside the domain of a special function."""


class ArgumentError(FamlError, ValueError):
    """Empty or otherwise invalid argument."""


class ConfigError(FamlError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(FamlError):
    """Dataset files are missing, malformed, or inconsistent."""


class StateError(FamlError, RuntimeError):
    """Operation called in the wrong object state."""


class TrainingAborted(NumericError):
    """Loss became non-finite during training.

    Attributes:
        epoch: epoch index at which the abort happened.
        batch: batch index within the epoch.
        term: name of the offending loss term.
    """

    def __init__(self, epoch: int, batch: int, term: str):
        self.epoch = epoch
        self.batch = batch
        self.term = term
        super().__init__(f"non-finite loss term {term!r} at epoch {epoch}, batch {batch}")


class MissingFileError(DataError):
    """A required dataset file does not exist."""


class AlignmentError(DataError):
    """Views (or views and labels) disagree on the number of rows."""


class ParseError(DataError):
    """A cell could not be parsed as a number."""


class LabelRangeError(DataError):
    """A label lies outside [0, K)."""
