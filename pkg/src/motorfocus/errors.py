"""Exception types shared across the pipeline."""


class MotorFocusError(Exception):
    """Base class for all library errors."""


class SequenceError(MotorFocusError):
    """Frame ingestion failed: missing path, too few frames, mixed sizes,
    or a malformed video header."""


class InsufficientFramesError(SequenceError):
    """A source did not yield enough frames for the requested operation."""


class DegenerateFitError(MotorFocusError):
    """Rigid-transform fit is underdetermined (e.g. all points coincide)."""


class NoConvergenceError(MotorFocusError):
    """No convergence point could be solved from the available rays."""


class EmptyStateError(MotorFocusError):
    """An aggregator operation requires at least one stored entry."""


class ConfigError(MotorFocusError):
    """Invalid configuration or scene-script input."""


class NoOverlapError(MotorFocusError):
    """Predictions and ground truth share no frames."""
