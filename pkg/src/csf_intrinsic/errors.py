"""Exception types raised by the decomposition stages."""


class IntrinsicError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateImage(IntrinsicError):
    """The image carries no chromatic structure (e.g. every pixel identical)."""


class NotUnit(IntrinsicError, ValueError):
    pass


class NonPositiveChannel(IntrinsicError, ValueError):
    pass


class DimensionMismatch(IntrinsicError, ValueError):
    pass


class ZeroVariance(IntrinsicError, ValueError):
    pass


class InvalidSpec(IntrinsicError, ValueError):
    pass


class EmptyGraph(IntrinsicError):
    """No pixel pairs were supplied to the fusion stage."""


class SolverDiverged(IntrinsicError):
    """The eigensolver did not reach its residual tolerance."""


class AdmmDiverged(IntrinsicError):
    """The per-pixel ADMM hit its iteration cap far from feasibility."""


class NoGap(IntrinsicError):
    """Embedding angles cover the whole circle; brightness must be compressed further."""


class StageError(IntrinsicError):
    """Wraps an error from one pipeline stage with the stage's name."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
