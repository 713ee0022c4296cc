"""Exception types shared across the package."""


class MmeaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MmeaError):
    """Operands have incompatible shapes; the message names both."""


class ContractError(MmeaError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(MmeaError):
    """Numerically degenerate input, e.g. normalizing a zero vector."""


class DatasetError(MmeaError):
    """A dataset file is missing or malformed; the message names the file."""


class CheckpointError(MmeaError):
    """A checkpoint file is missing, corrupt, or inconsistent with the config."""


class TrainingError(MmeaError):
    """Optimization failed, e.g. a non-finite loss or gradient."""
