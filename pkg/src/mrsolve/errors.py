"""Exception hierarchy shared by all mrsolve modules."""


class MrSolveError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(MrSolveError, ValueError):
    """An argument violates an operation precondition."""


class ShapeMismatchError(InvalidArgumentError):
    """Operand shapes are inconsistent."""


class CapacityError(MrSolveError):
    """Requested index width cannot represent the block's column range."""


class SingularDiagonalError(MrSolveError):
    """A matrix diagonal entry is zero or structurally missing."""


class SingularMatrixError(MrSolveError):
    """Matrix is singular to working precision."""


class BreakdownError(MrSolveError):
    """Krylov recurrence breakdown (vanishing rho or omega).

    Carries the index of the offending right-hand-side column.
    """

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (rhs column {column})")
        self.column = column


class InstabilityError(MrSolveError):
    """Recursive residual has drifted too far from the true residual."""


class SetupDegeneracyError(MrSolveError):
    """AMG setup produced an F-point without a strong C-neighbor."""


class ConfigurationError(MrSolveError):
    """Illegal solver configuration (method/role legality or schema)."""


class FormatError(MrSolveError):
    """Malformed binary system file.

    ``offset`` is the byte position of the offending field, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
