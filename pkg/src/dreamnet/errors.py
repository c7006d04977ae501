"""Exception types raised across the package."""


class DreamNetError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DreamNetError, ValueError):
    pass


class NotSpd(DreamNetError, ValueError):
    pass


class DegenerateSet(DreamNetError, ValueError):
    """Frame set whose covariance has (numerically) zero trace."""


class ConvergenceFailure(DreamNetError, ArithmeticError):
    pass


class BadLabel(DreamNetError, ValueError):
    pass


class BadConfig(DreamNetError, ValueError):
    pass


class BadShape(DreamNetError, ValueError):
    pass


class RankDeficient(DreamNetError, ArithmeticError):
    pass


class ParseError(DreamNetError, ValueError):
    pass


class ShapeError(DreamNetError, ValueError):
    pass


class TooFew(DreamNetError, ValueError):
    pass


class NonFinite(DreamNetError, ArithmeticError):
    pass
