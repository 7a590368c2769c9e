"""Exception hierarchy.

User-facing failures (bad config, bad data, bad files) derive from
:class:`UserError`; numerical blow-ups derive from :class:`NumericError`.
The command-line entry point maps these to exit codes 1 and 2.
"""


class PGS2SError(Exception):
    pass


class UserError(PGS2SError):
    pass


class NumericError(PGS2SError, ArithmeticError):
    """Non-finite values during a forward pass, gradient or update."""


class DimensionError(PGS2SError, ValueError):
    pass


class ContractError(UserError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(UserError, ValueError):
    pass


class DataError(UserError, ValueError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class GapError(DataError):
    pass


class DegenerateChannelError(DataError):
    pass


class TaskSizeError(DataError):
    pass


class DivergenceError(NumericError):
    pass


class ProbeError(NumericError):
    pass


class MetricUndefinedError(PGS2SError, ValueError):
    pass


class CheckpointError(UserError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class SearchExhaustedError(PGS2SError, RuntimeError):
    pass


class NothingToPlotError(UserError):
    pass
