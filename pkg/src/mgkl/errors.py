"""Exception types raised across the package."""


class MgklError(Exception):
    """Base class for all package errors."""


class AbsoluteContinuityViolation(MgklError):
    """R puts mass on a point where P has none."""


class DegenerateReference(MgklError):
    """Bernoulli reference parameter at 0 or 1 with a nonzero matching term."""


class EmptyConditioningSet(MgklError):
    """Conditioning on a set of zero probability."""


class NonPositiveWeight(MgklError):
    """An importance weight <= 0 where a logarithm or inverse is needed."""


class DegenerateInput(MgklError):
    """Training data admits no split (all points identical or one class only)."""


class DimensionMismatch(MgklError):
    pass


class EmptySide(MgklError):
    pass


class NonConvergence(MgklError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class MassTooSmall(MgklError):
    pass


class MissingLabel(MgklError):
    pass


class OverflowGuard(RuntimeWarning):
    """Log-weights left the stable exponent window and were rescaled."""
