"""Exception hierarchy shared by all modules."""


class CtmcFilterError(Exception):
    """Base class for library errors."""


class NonSquare(CtmcFilterError, ValueError):
    pass


class NegativeOffDiagonal(CtmcFilterError, ValueError):
    pass


class InconsistentGenerator(CtmcFilterError, ValueError):
    pass


class InvalidDistribution(CtmcFilterError, ValueError):
    pass


class InvalidTime(CtmcFilterError, ValueError):
    pass


class DomainError(CtmcFilterError, ValueError):
    pass


class GridTooCoarse(CtmcFilterError, ValueError):
    pass


class OutOfRange(CtmcFilterError, ValueError):
    pass


class ShapeError(CtmcFilterError, ValueError):
    pass


class UnreachablePair(CtmcFilterError, ValueError):
    pass


class AbsorbingState(CtmcFilterError, ValueError):
    pass


class CflViolation(CtmcFilterError, ValueError):
    """Raised when a PDE grid would be unstable; ``required_nt`` gives a safe step count."""

    def __init__(self, message, required_nt):
        super().__init__(message)
        self.required_nt = required_nt


class SolverInstability(CtmcFilterError, ArithmeticError):
    pass


class SupportOverflow(CtmcFilterError, MemoryError):
    pass


class UnknownPreset(CtmcFilterError, KeyError):
    pass


class CapabilityError(CtmcFilterError, ValueError):
    """A method was asked for a model it cannot handle (e.g. exact filter with d > 2)."""


class DegenerateLikelihood(UserWarning):
    """All filter numerators underflowed; the step fell back to pure prediction."""


class ConfigError(CtmcFilterError, ValueError):
    pass
