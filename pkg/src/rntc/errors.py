"""Exception hierarchy. Each class carries the CLI exit code for its failure class."""


class RntcError(Exception):
    exit_code = 1


class ConfigError(RntcError, ValueError):
    """Invalid configuration: bad grid spec, CFL violation, unknown config key, ..."""

    exit_code = 2


class DatasetError(RntcError, IOError):
    """Unreadable, mismatched or corrupt artifact file."""

    exit_code = 3


class CorruptFileError(DatasetError):
    pass


class NumericalError(RntcError, ArithmeticError):
    """Non-finite values where finite ones are required (NaN loss, NaN input)."""

    exit_code = 4
