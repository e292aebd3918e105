"""Exception hierarchy shared by all modules."""


class ContractViolation(ValueError):
    """Input does not satisfy an operation's precondition (shape, sign, dimension)."""


class CapabilityError(NotImplementedError):
    """A model lacks a capability the operation needs (e.g. third derivatives)."""


class StrategyError(ValueError):
    """The requested sampling strategy is not admissible for the given state."""


class ToleranceError(ArithmeticError):
    """A numerical quadrature or solve did not reach its tolerance."""


class TrajectoryInstabilityError(FloatingPointError):
    """One or more trajectories escaped the admissible region or became non-finite.

    Attributes
    ----------
    indices : ndarray of int
        Indices of the failed nodes within the propagated ensemble.
    partial : object or None
        Partial result computed before the failure, when available.
    """

    def __init__(self, message, indices=(), partial=None):
        super().__init__(message)
        self.indices = indices
        self.partial = partial


class ConfigError(ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message, field=None, line=None):
        where = ""
        if field is not None:
            where += f" [field {field!r}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)
        self.field = field
        self.line = line
