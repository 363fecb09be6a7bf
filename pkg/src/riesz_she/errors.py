class RieszSheError(Exception):
    """Base class for errors raised by this package."""


class DomainError(RieszSheError, ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class SingularityError(DomainError):
    """Evaluation requested at a point where the kernel is infinite."""


class PrecisionError(RieszSheError, ArithmeticError):
    """A quadrature could not reach its accuracy target."""


class PreconditionError(RieszSheError, ValueError):
    """An input object is of the wrong kind for the operation."""


class BlowUpError(RieszSheError, FloatingPointError):
    """Non-finite values appeared in a solution.

    ``index`` is the first offending ``(time_step, space_index)``;
    ``replica`` is filled in when the error is propagated from a replica run.
    """

    def __init__(self, message, index=None, replica=None):
        super().__init__(message)
        self.index = index
        self.replica = replica


class CouplingError(RieszSheError, ValueError):
    """Ensembles that must share a noise realization do not."""


class ConfigError(RieszSheError, ValueError):
    """An experiment configuration is invalid."""
