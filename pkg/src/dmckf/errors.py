"""Exception hierarchy shared by every module."""


class DmckfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(DmckfError, ValueError):
    """An argument violates a documented precondition."""


class DecompositionError(DmckfError, ArithmeticError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the zero-based index of the failing diagonal entry and
    ``block`` optionally names the covariance block being factored.
    """

    def __init__(self, pivot, value, block=None):
        self.pivot = pivot
        self.value = value
        self.block = block
        where = f" in {block} block" if block else ""
        super().__init__(
            f"cholesky failed{where}: pivot {pivot} = {value:.3e} is not positive"
        )


class SingularUpdateError(DmckfError, ArithmeticError):
    """The innovation covariance of a filter update is not invertible."""


class RankDeficiencyError(DmckfError, ArithmeticError):
    """A normal matrix has a non-positive minimum eigenvalue."""


class PreconditionError(DmckfError, ValueError):
    """A convergence precondition such as beta > zeta does not hold."""


class NoRootError(DmckfError, ArithmeticError):
    """Root bracketing failed within the allowed number of doublings."""


class ConfigError(DmckfError, ValueError):
    """An experiment configuration is unreadable or violates the schema."""
