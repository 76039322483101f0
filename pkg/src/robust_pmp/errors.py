"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match the model."""


class CapabilityError(NotImplementedError):
    """The requested derivative order or norm combination is not supported."""


class NumericOverflowError(FloatingPointError):
    """A sweep produced non-finite values."""


class DegenerateGradientError(ValueError):
    """The input gradient vanishes where a normalization needs it nonzero."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite objective.

    ``last_good`` holds the last control path with a finite objective and
    ``report`` the records collected so far.
    """

    def __init__(self, message, last_good=None, report=None):
        super().__init__(message)
        self.last_good = last_good
        self.report = report


class UnboundedDualError(RuntimeError):
    """The inner supremum of the dual problem exceeded the configured cap."""


class ConfigError(ValueError):
    """Configuration failed schema validation."""


class DatasetParseError(ValueError):
    """A dataset file could not be parsed."""
