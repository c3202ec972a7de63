"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Inputs have inconsistent dimensions or an out-of-range mode index."""


class CapacityError(RuntimeError):
    """Refusal to materialize a dense array beyond the entry budget."""


class ZeroNormError(ValueError):
    """A relative quantity was requested against a zero reference norm."""


class FormatError(ValueError):
    """A serialized tensor train could not be parsed.

    The byte offset at which parsing failed is stored in ``offset``.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """A serialized tensor train uses an unsupported format version."""


class DegenerateRangeError(RuntimeError):
    """Sampled range had numerically zero content in a requested direction."""


class InterpolationError(RuntimeError):
    """An interpolation system was too ill-conditioned to trust.

    The worst residual over right-hand sides is stored in ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BacktrackingRequiredError(RuntimeError):
    """A stage would need more interpolation sets than the previous rank allows.

    Recovering would mean re-running earlier stages at higher rank, which the
    builder does not attempt; raise to the caller instead.
    """


class BuildStageError(RuntimeError):
    """Wraps a failure inside the core-by-core build with the stage index."""

    def __init__(self, stage, cause):
        super().__init__(f"build failed at stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


class NewtonError(RuntimeError):
    """The nonlinear state solve did not reach tolerance."""


class ConvergenceWarning(UserWarning):
    """An iterative estimate stopped without meeting its tolerance."""


class RankClampWarning(UserWarning):
    """A requested rank exceeded what the surrounding sizes allow."""
