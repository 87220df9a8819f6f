"""Exception and warning types shared across the package."""


class LayeredGGMError(Exception):
    """Base class for errors raised by this package."""


class NotPositiveDefinite(LayeredGGMError, ValueError):
    """Raised when a matrix required to be SPD fails Cholesky factorization."""


class EmptyData(LayeredGGMError, ValueError):
    pass


class BadConfig(LayeredGGMError, ValueError):
    pass


class RankDeficient(LayeredGGMError, ValueError):
    pass


class ZeroVarianceColumn(LayeredGGMError, ValueError):
    pass


class TooLarge(LayeredGGMError, ValueError):
    pass


class TuningFailed(LayeredGGMError, RuntimeError):
    pass


class ExperimentFailed(LayeredGGMError, RuntimeError):
    pass


class StageError(LayeredGGMError, RuntimeError):
    """Wraps an exception raised inside one stage of a pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class NonConverged(RuntimeWarning):
    """Warning category: an iterative solver hit its iteration cap.

    The solver still returns its last iterate.
    """


class RidgeFallback(UserWarning):
    """Warning category: a small ridge was added to make a problem solvable."""
