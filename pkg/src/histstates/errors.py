"""Exception hierarchy shared by every module."""


class HistoryError(Exception):
    """Base class for all errors raised by histstates."""


class ShapeMismatch(HistoryError, ValueError):
    pass


class NormalizationError(HistoryError, ValueError):
    pass


class NotHermitian(HistoryError, ValueError):
    pass


class TimelineMismatch(HistoryError, ValueError):
    pass


class ZeroWeight(HistoryError, ArithmeticError):
    """Raised when a history state has (numerically) zero weight, i.e. is physically null."""


class NotNormalized(HistoryError, ValueError):
    pass


class FamilyNotValidated(HistoryError):
    pass


class FamilyInvalid(HistoryError):
    pass


class NonCommuting(HistoryError):
    pass


class InvalidStep(HistoryError, ValueError):
    """A marking step whose controls are not an orthogonal resolution of the identity."""


class Misaligned(HistoryError):
    """A marking schedule does not measure the requested family."""


class BasisNotOrthonormal(HistoryError, ValueError):
    pass


class ScenarioError(HistoryError):
    """Base class for scenario loading errors; ``location`` names the offending key."""

    def __init__(self, message, location=""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ParseError(ScenarioError):
    pass


class ResolutionError(ScenarioError):
    pass


class ShapeError(ScenarioError):
    pass
