"""Exception taxonomy shared across the toolkit.

The CLI maps these onto stable exit codes (contract -> 2, I/O -> 3,
numerical -> 4), so scoring scripts can branch on failure class.
"""


class NcoodError(Exception):
    """Base class for all toolkit errors."""


class ContractError(NcoodError):
    """An argument violates an operation's contract (shape, range, dtype)."""


class FormatError(NcoodError):
    """A byte stream does not parse as the tensor interchange format."""


class TensorIOError(NcoodError):
    """A file or stream could not be read or written."""


class ConsistencyError(NcoodError):
    """A bundle's parts disagree with each other."""


class FitError(NcoodError):
    """A statistic or detector could not be fit on the given training data."""


class TrainingError(NcoodError):
    """The trainer diverged or otherwise failed numerically."""


class GenerationError(NcoodError):
    """A synthetic dataset could not be constructed within its retry budget."""
