"""Exception hierarchy shared across the package."""


class HfrError(Exception):
    """Base class for all package errors."""


class ValidationError(HfrError, ValueError):
    """Input failed a shape, range or schema check."""


class DegenerateColumnError(ValidationError):
    """A column has zero variance."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column} has zero variance")


class CollinearityError(ValidationError):
    """A correlation entering a denominator is numerically +-1."""

    def __init__(self, pair, message=None):
        self.pair = pair
        super().__init__(message or f"perfect collinearity for pair {pair}")


class InsufficientSampleError(ValidationError):
    """Too few observations for the requested model."""


class NumericalError(HfrError, ArithmeticError):
    """Base class for failures inside numerical routines."""


class RankDeficiencyError(NumericalError):
    """Normal equations are singular."""

    def __init__(self, n_columns, rank=None):
        self.n_columns = n_columns
        self.rank = rank
        msg = f"design with {n_columns} columns is rank deficient"
        if rank is not None:
            msg += f" (numerical rank {rank})"
        super().__init__(msg)


class InfeasibleError(NumericalError):
    """Constraint set of the shrinkage program is empty."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)
