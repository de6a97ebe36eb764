"""Typed errors raised by the engine.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map them to distinct exit messages.
"""


class GradDistillError(Exception):
    """Base class for all engine errors."""


class ShapeError(GradDistillError):
    """Array dimensions do not match an operation's contract."""


class NonFiniteError(GradDistillError):
    """NaN or Inf encountered where finite values are required."""


class LabelError(GradDistillError):
    """Class label outside the valid range."""


class DegenerateGradientError(GradDistillError):
    """A vectorized classifier gradient has zero norm; cosine distance undefined."""


class FormatError(GradDistillError):
    """A file or container failed to parse (bad magic, truncated payload, ...)."""


class ConfigError(GradDistillError):
    """Run configuration is missing, malformed, or violates an invariant."""


class DatasetError(GradDistillError):
    """Dataset directory or contents violate the expected layout."""
