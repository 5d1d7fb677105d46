"""Exception hierarchy.  ``exit_code`` is what the CLI returns for each class."""


class EnsembleFrontierError(Exception):
    exit_code = 4


class ConfigError(EnsembleFrontierError, ValueError):
    """Invalid configuration or argument values."""

    exit_code = 2


class DataFormatError(EnsembleFrontierError, ValueError):
    """Input file does not conform to its documented format."""

    exit_code = 3


class MalformedRow(DataFormatError):
    pass


class NegativeProbability(DataFormatError):
    pass


class RowSumOutOfTolerance(DataFormatError):
    pass


class EmptyDump(DataFormatError):
    pass


class ShapeMismatch(EnsembleFrontierError, ValueError):
    """Prediction sets or labels that cannot be combined."""

    exit_code = 3


class InvariantViolation(EnsembleFrontierError):
    exit_code = 4
