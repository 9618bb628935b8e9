"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DecompositionError(RuntimeError):
    """Raised when the algebraic decomposition cannot be completed.

    Carries a human-readable diagnostic (which eigenspace or pairing
    failed) so callers can report it without re-running the pipeline.
    """


class PulseOptimizationError(RuntimeError):
    """Raised when pulse optimization ends below the acceptance threshold.

    The best result found is attached so callers can inspect or keep it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
