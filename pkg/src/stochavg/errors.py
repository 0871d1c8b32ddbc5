"""Exception hierarchy.

Two families matter to callers: :class:`ConfigError` (bad inputs, exit code 2
in the CLI) and :class:`NumericalError` (a computation that could not meet its
tolerance, exit code 3).
"""


class StochAvgError(Exception):
    pass


class ConfigError(StochAvgError, ValueError):
    pass


class NumericalError(StochAvgError, ArithmeticError):
    pass


# expressions / systems
class ExpressionError(ConfigError):
    pass


class UnknownName(ConfigError):
    pass


class MissingParam(ConfigError):
    pass


class OriginViolation(ConfigError):
    pass


class LipschitzViolation(ConfigError):
    pass


class NoBound(NumericalError):
    pass


# orbits
class NoLevelPoint(NumericalError):
    pass


class NoReturn(NumericalError):
    pass


class ToleranceFailure(NumericalError):
    pass


class OutOfFamily(ConfigError):
    pass


class SeparatrixGuard(ConfigError):
    pass


# averaging
class DerivativeUnavailable(NumericalError):
    pass


class GridMismatch(ConfigError):
    pass


class OrderTooHigh(ConfigError):
    pass


class GridTooCoarse(NumericalError):
    pass


class FitAmbiguous(NumericalError):
    def __init__(self, message, slope=None):
        super().__init__(message)
        self.slope = slope


class NoRoot(NumericalError):
    pass


class DerivativeZero(NumericalError):
    pass


class StencilOutOfDomain(NumericalError):
    pass


# classifier
class BadKappa(ConfigError):
    pass


class BadOrder(ConfigError):
    pass


class MissingNoiseBound(ConfigError):
    pass


class HypothesisViolated(ConfigError):
    pass


# monte carlo
class WindowTooShort(ConfigError):
    pass


class HorizonTooLong(ConfigError):
    def __init__(self, message, required_steps=None):
        super().__init__(message)
        self.required_steps = required_steps
