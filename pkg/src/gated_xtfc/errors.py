"""Exception types shared across the solver modules."""


class GatedXTFCError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(GatedXTFCError):
    """A numerical routine could not produce a trustworthy result."""


class NonPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class DegenerateModel(NumericalError):
    pass


class AllEvaluationsFailed(NumericalError):
    pass


class DimensionMismatch(GatedXTFCError, ValueError):
    pass


class EmptyBlock(GatedXTFCError, ValueError):
    pass


class InvalidSplit(GatedXTFCError, ValueError):
    pass


class OutOfAnchorRange(GatedXTFCError, ValueError):
    pass


class TooFewPoints(GatedXTFCError, ValueError):
    pass


class ConfigError(GatedXTFCError, ValueError):
    """Invalid or unknown run configuration."""
