"""Exception hierarchy shared by every lbw module."""


class LbwError(Exception):
    """Base class for all errors raised by lbw."""


class DimensionMismatch(LbwError, ValueError):
    pass


class CountMismatch(LbwError, ValueError):
    pass


class NonConvergence(LbwError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DegenerateMatrix(LbwError, ArithmeticError):
    """A covariance collapsed (all eigenvalues under the floor)."""


class NotPositiveSemidefinite(LbwError, ValueError):
    """Matrix is asymmetric or has eigenvalues well below zero."""


class NonFiniteInput(LbwError, ValueError):
    pass


class NonFiniteCost(LbwError, ValueError):
    pass


class InsufficientData(LbwError, ValueError):
    pass


class EmptyComponent(LbwError, RuntimeError):
    """A mixture component kept starving after repeated re-seeding."""


class UnknownGroup(LbwError, KeyError):
    pass


class ProvenanceMismatch(LbwError, ValueError):
    """A barycenter model does not derive from the given transport model."""


class SingleGroup(LbwError, ValueError):
    pass


class SingleClass(LbwError, ValueError):
    pass


class EmptyMask(LbwError, ValueError):
    pass


class BothEmpty(LbwError, ValueError):
    pass
