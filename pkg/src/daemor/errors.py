"""Exception hierarchy shared by all modules."""


class DaemorError(Exception):
    """Base class for every error raised by :mod:`daemor`."""


class SingularMatrix(DaemorError, ValueError):
    """A factorization hit a pivot below the singularity threshold."""


class ShiftOnSpectrum(SingularMatrix):
    """A Krylov shift coincides (numerically) with a pencil eigenvalue."""


class SingularProjection(SingularMatrix):
    """The projected descriptor matrix ``W^T E V`` is singular."""


class NonUniqueSolution(DaemorError, ValueError):
    """A Lyapunov/Sylvester equation is not uniquely solvable."""


class SingularPencil(DaemorError, ValueError):
    """The matrix pencil ``(A, E)`` is not regular."""


class NotSemiExplicit(DaemorError, ValueError):
    """A descriptor system cannot be brought to semi-explicit index-1 form."""


class DimensionMismatch(DaemorError, ValueError):
    pass


class UnpairedComplexShift(DaemorError, ValueError):
    pass


class ZeroDirection(DaemorError, ValueError):
    pass


class StructuralGuard(DaemorError):
    """Orthogonal projection would not reduce the underlying ODE.

    Raised when neither ``B22 = 0`` (input side) / ``C22 = 0`` (output side)
    nor the symmetry triple holds. Pass ``unsafe=True`` to reduce anyway.
    """


class ShiftInClosedLeftHalfPlane(DaemorError, ValueError):
    pass


class LyapunovSingular(DaemorError):
    """The pseudo-optimal Gramian is singular (interpolation data unobservable)."""


class UnstableModel(DaemorError):
    pass


class UnstableSystem(DaemorError):
    pass


class NotPositiveDefinite(DaemorError):
    pass


class PseudoOptimalityViolated(DaemorError):
    pass


class OptimizerFailed(DaemorError):
    pass


class StagnationDetected(DaemorError):
    pass


class FeedthroughMismatch(DaemorError):
    pass
