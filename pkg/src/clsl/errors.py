"""Exception hierarchy. Each family maps to a CLI exit code."""


class ClslError(Exception):
    exit_code = 1


class ConfigError(ClslError):
    """Invalid configuration or mismatched shapes."""

    exit_code = 2


class ShapeError(ConfigError):
    pass


class DataError(ClslError):
    """Malformed or out-of-alphabet input data."""

    exit_code = 3


class NumericError(ClslError):
    """Non-finite values or a math domain violation."""

    exit_code = 4


class NumericDomainError(NumericError):
    pass


class InvariantError(AssertionError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class EvaluationError(DataError):
    """A metric is undefined for the data it was given."""
