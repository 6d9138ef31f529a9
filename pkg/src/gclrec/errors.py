"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (incl.
CheckpointError) -> 2, NumericError -> 3.
"""


class GclrecError(Exception):
    """Base class for all package errors."""


class ConfigError(GclrecError):
    """Invalid configuration value or unusable generator/CLI parameters."""


class DataError(GclrecError):
    """Malformed or unusable input data."""


class CheckpointError(DataError):
    """Unreadable, truncated or shape-incompatible checkpoint file."""


class ShapeError(GclrecError):
    """Tensor shapes do not conform to an operation's rules."""


class NumericError(GclrecError):
    """Non-finite values or numeric divergence."""


class ContractError(GclrecError):
    """An operation was invoked outside its stated contract."""


class TapeReuseError(ContractError):
    """A computation record was replayed after it was already consumed."""
