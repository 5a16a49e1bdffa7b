"""Exception types shared across the package."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NumericError(ArithmeticError):
    """A non-finite value showed up during evaluation.

    ``primitive`` names the operation whose output (or gradient) went bad.
    """

    def __init__(self, primitive, message=None, iteration=None):
        self.primitive = primitive
        self.iteration = iteration
        msg = message or f"non-finite value produced by {primitive}"
        if iteration is not None:
            msg += f" (iteration {iteration})"
        super().__init__(msg)


class OptimizationError(NumericError):
    """Numeric failure inside an optimization loop.

    Carries whatever fallback state the loop had: the last good parameters
    for pre-training, or the stage-1 result for joint refinement.
    """

    def __init__(self, primitive, iteration, fallback=None, fallback_iteration=None):
        super().__init__(primitive, iteration=iteration)
        self.fallback = fallback
        self.fallback_iteration = fallback_iteration


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass
