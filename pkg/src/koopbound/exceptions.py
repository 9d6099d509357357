"""Exception types raised by koopbound."""


class KoopboundError(ValueError):
    """Base class for all library errors."""


class DimensionError(KoopboundError):
    """Shapes of matrices, vectors or layer chains do not agree."""


class InfeasibleClassError(KoopboundError):
    """A weight class is empty (e.g. ``C**d < D``)."""


class ClassViolationError(KoopboundError):
    """One or more weight matrices fall outside the requested class."""


class UnboundedRatioError(KoopboundError):
    """The Fourier weight ratio supremum diverges (``s_in > s_out``)."""


class ConvergenceError(KoopboundError):
    """An iterative numerical routine failed to converge."""


class RankDeficientWarning(UserWarning):
    """A determinant-type quantity collapsed to zero."""
