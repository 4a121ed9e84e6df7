"""Exception types raised across the package."""


class ShelfReduceError(Exception):
    """Base class for all package errors."""


# scene
class RetryExhausted(ShelfReduceError):
    pass


class WrongBookCount(ShelfReduceError):
    pass


# formulation
class UnorderedInstance(ShelfReduceError):
    pass


class UnboundedVariable(ShelfReduceError):
    pass


# envelope
class UncoveredVariable(ShelfReduceError):
    pass


class InfiniteBounds(ShelfReduceError):
    pass


class EmptyList(ShelfReduceError):
    pass


class OutOfRange(ShelfReduceError):
    pass


class InvalidCode(ShelfReduceError):
    pass


# solver
class NumericalFailure(ShelfReduceError):
    pass


class Infeasible(ShelfReduceError):
    pass


class LimitReached(ShelfReduceError):
    """Raised when a B&B limit is hit; ``incumbent`` holds the best solution found, if any."""

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


class NonIntegral(ShelfReduceError):
    pass


# learning
class DegenerateLabels(ShelfReduceError):
    pass


class UntrainedModel(ShelfReduceError):
    pass


class EmptyDataset(ShelfReduceError):
    pass


# io / cli
class SchemaMismatch(ShelfReduceError):
    pass


class IndexOutOfRange(ShelfReduceError, IndexError):
    pass
