"""Exception types raised across the package."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class IntegrationDiverged(RuntimeError):
    """A geodesic integration produced a state component beyond the bound."""


class InsufficientSamples(ValueError):
    """A sampled curve does not carry enough points for the requested fit."""


class NegativeMass(ValueError):
    """A measure carries a negative mass in strict mode."""


class NoDescentCandidate(RuntimeError):
    """Every oracle candidate has nonnegative linearized score.

    Signals the stopping regime of the outer loop: no single atom can
    decrease the energy to first order.
    """


class BarrierViolation(RuntimeError):
    """No feasible iterate was found under the regularizer-ball barrier."""
