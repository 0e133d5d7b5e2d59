"""Exception hierarchy for the fwdvol package."""


class FwdVolError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateRoot(FwdVolError):
    """The short-end variance discriminant is negative, so the spot
    volatility square root does not exist without regularization."""


class NumericalBlowup(FwdVolError):
    """A simulated path produced non-finite values.

    Carries the step index (and path index, when known) of the first
    offending step.
    """

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class InsufficientSample(FwdVolError):
    """Too few Monte Carlo paths for a statistical test to be meaningful."""


class NegativeTotalVariance(FwdVolError):
    """A total-variance value was negative where positivity is required."""


class NonPositiveTimeToMaturity(FwdVolError):
    """Requested an implied volatility at or beyond the option maturity."""


class ScenarioError(FwdVolError):
    """A scenario file or parameter set failed validation."""
