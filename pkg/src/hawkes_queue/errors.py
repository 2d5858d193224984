"""Exception and warning types raised by the library.

Numeric failures derive from ``NumericError`` so the CLI can map them to a
single exit code; configuration problems derive from ``ConfigError``.
"""


class HawkesQueueError(Exception):
    """Base class for every error raised here."""


class NumericError(HawkesQueueError, ArithmeticError):
    pass


class UnstableProcess(NumericError):
    """Stable-regime formula requested with jump >= decay."""


class StableProcess(NumericError):
    """Unstable-regime formula requested with jump < decay."""


class NearSingularGap(NumericError):
    """A closed form has a (near) vanishing denominator."""


class OrderCapExceeded(NumericError):
    pass


class NonSquare(NumericError, ValueError):
    pass


class SingularMatrix(NumericError):
    pass


class SingularShiftedMatrix(SingularMatrix):
    pass


class NonHurwitz(NumericError):
    pass


class UnhandledCaseSplit(NearSingularGap):
    """A vanishing denominator that has no dedicated closed form."""


class CgfBlowup(NumericError):
    def __init__(self, message, blowup_time=None):
        super().__init__(message)
        self.blowup_time = blowup_time


class EventCapExceeded(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class DegenerateObjective(NumericError, ValueError):
    pass


class ConfigError(HawkesQueueError, ValueError):
    pass


class InvalidSubGenerator(ConfigError):
    pass


class InvalidInitialDist(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class InsufficientReps(ConfigError):
    pass


class NonDistinctRates(UserWarning):
    """Hyper-exponential rates are not pairwise distinct."""


class FallbackWarning(UserWarning):
    """A closed form was replaced by numerical ODE integration."""
