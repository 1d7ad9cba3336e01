"""Exception types raised across the package."""


class HetFLError(Exception):
    """Base class for every error raised by hetfl."""


class DimensionError(HetFLError, ValueError):
    pass


class NumericError(HetFLError, FloatingPointError):
    pass


class ConfigError(HetFLError, ValueError):
    pass


class InfeasibleCoverageError(ConfigError):
    pass


class UnsupportedKindError(HetFLError, ValueError):
    pass


class FormatError(HetFLError, ValueError):
    pass


class ConsistencyError(HetFLError, ValueError):
    pass


class DivergenceError(HetFLError, ArithmeticError):
    def __init__(self, message, *, round=None, client=None, epoch=None):
        super().__init__(message)
        self.round = round
        self.client = client
        self.epoch = epoch


class ComparabilityError(HetFLError, ValueError):
    pass
