"""Exception types shared across the package."""


class PunctualError(Exception):
    """Base class for all package-specific errors."""


class ModelEvaluationError(PunctualError):
    """A user-supplied fitness/kernel callback failed at a probe point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class QuadratureError(PunctualError):
    """Numerical integration did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DimensionMismatchError(PunctualError):
    """Model and kernel (or state) dimensions disagree."""


class DegenerateSingularityError(PunctualError):
    """A classification hypothesis fails (zero denominator, singular D)."""


class UnboundedIntervalError(PunctualError):
    """dim-1 classification requires finite neighbouring singularities."""


class DegenerateSigmaError(PunctualError):
    """sigma is numerically singular at a point away from the singular set."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NumericalBlowupError(PunctualError):
    """A simulated state became non-finite."""


class NeedsFullPathError(PunctualError):
    """The operation requires a stored trajectory, not a summary."""


class ScenarioError(PunctualError):
    """Scenario file is malformed or violates the strict schema."""
