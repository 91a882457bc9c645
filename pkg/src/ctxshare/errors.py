"""Exception types shared across the package."""


class CtxShareError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CtxShareError):
    """A configuration value is invalid; raised before any simulation runs."""


class InvalidActionError(CtxShareError):
    """An action referenced a nonexistent neighbor. Programming error, aborts the run."""


class IncompatibleExperienceError(CtxShareError):
    """A shared batch's action space does not match the receiving agent's."""


class MalformedWindowError(CtxShareError):
    """A feature window mixes dimensionalities or sizes."""


class DegenerateMetricError(CtxShareError):
    """Too little data to fit a context metric; callers fall back to Euclidean."""


class CorruptSeriesError(CtxShareError):
    """A compressed series cannot be decoded."""
