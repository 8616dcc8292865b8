"""Exception hierarchy.

Everything numerical derives from :class:`NumericalFailure` so the CLI can map
it to exit code 2; configuration problems raise :class:`ConfigError` (exit 1).
"""


class KinhomError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KinhomError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"[{key}] {message}"
        super().__init__(message)


class NumericalFailure(KinhomError):
    """A solver precondition, postcondition or invariant was violated."""


class GridMismatch(NumericalFailure, ValueError):
    pass


class UnderresolvedOscillation(NumericalFailure):
    """The x-grid is too coarse for the oscillation scale being probed."""


class CFLViolation(NumericalFailure):
    pass


class StepTooLarge(NumericalFailure):
    pass


class NonConvergence(NumericalFailure):
    def __init__(self, iterations, residual, message=""):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(relative residual {residual:.3e}) {message}".strip()
        )


class FormMismatch(NumericalFailure):
    pass


class SymmetryViolation(NumericalFailure):
    pass


class EnergyGrowth(NumericalFailure):
    pass


class HypothesisViolation(NumericalFailure):
    """A structural hypothesis on the data failed at a sampled point."""

    def __init__(self, message, worst_point=None, value=None):
        self.worst_point = worst_point
        self.value = value
        super().__init__(message)


class HypothesisHFailed(HypothesisViolation):
    """Kernels of B(t, x, .) differ between two sample points."""

    def __init__(self, message, points=None, angle=None):
        self.points = points
        self.angle = angle
        super().__init__(message, worst_point=points, value=angle)


class UnsupportedRegion(NumericalFailure):
    pass


class IllConditionedWarning(UserWarning):
    """The singular-value gap around the kernel threshold is small."""
