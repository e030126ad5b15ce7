"""Exception types raised across prunelab."""


class PruneLabError(Exception):
    """Base class for all prunelab errors."""


class ConfigurationError(PruneLabError, ValueError):
    """Invalid configuration, shapes that do not compose, bad hyperparameters."""


class NumericError(PruneLabError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class UsageError(PruneLabError, RuntimeError):
    """An API was called out of order or with mismatched objects."""


class DataError(PruneLabError, ValueError):
    """Malformed or out-of-range data."""


class ParseError(DataError):
    """A binary file could not be parsed."""


class PolicyError(PruneLabError, ValueError):
    """A pruning request conflicts with the structural policy of the network."""
