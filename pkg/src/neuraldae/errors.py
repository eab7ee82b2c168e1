"""Exception hierarchy.

Errors fall into three families that the command line maps to exit codes:
configuration or model-definition problems, data problems, and solver
failures.
"""


class NeuralDaeError(Exception):
    """Base class of all package errors."""


class ConfigError(NeuralDaeError):
    """Invalid configuration or model definition."""


class DataError(NeuralDaeError):
    """Invalid, missing or inconsistent data."""


class SolverError(NeuralDaeError):
    """A numerical solve did not reach an acceptable point."""


class InvalidConfig(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class UnknownSymbol(ConfigError):
    pass


class EmptyHorizon(ConfigError):
    pass


class UnsupportedOrder(ConfigError):
    pass


class DuplicatePoints(ConfigError):
    pass


class MissingNetwork(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class InconsistentInitialState(ConfigError):
    pass


class NonpositiveVolume(ConfigError):
    pass


class TimeOutOfHorizon(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class ObservationOutsideElements(DataError):
    pass


class OutOfHorizon(DataError):
    pass


class EmptySample(DataError):
    pass


class DataNotFound(DataError):
    pass


class SolverFailure(SolverError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status
