"""Error types shared across the package."""


class ConvexReluError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(ConvexReluError):
    """An input violates a documented precondition (shape, finiteness, enum)."""


class DataFormatError(ConvexReluError):
    """A dataset file is malformed; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class NotWhitenable(ConvexReluError):
    """The dataset has more samples than its rank, so AA^T = I is unreachable."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class NotWhitened(ConvexReluError):
    """A closed form that requires AA^T = I was called on non-whitened data."""


class Infeasible(ConvexReluError):
    """An equality-constrained program has no solution; carries the residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class RankError(ConvexReluError):
    """A closed form requires full row rank and the data does not have it."""


class DegenerateExtreme(ConvexReluError):
    """The requested sample sits inside the span of its competitors (zero residual)."""


class PatternInfeasible(ConvexReluError):
    """No unit-ball neuron realizes the requested activation pattern."""


class EmptyClass(ConvexReluError):
    """A one-hot label matrix contains a class with no samples."""


class SingularKernel(ConvexReluError):
    """The kernel matrix is numerically singular and cannot be inverted."""
