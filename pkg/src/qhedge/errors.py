"""Exception types shared across the package."""


class QHedgeError(Exception):
    """Base class for all engine errors."""


class ConfigError(QHedgeError):
    """Invalid experiment configuration or command-line input."""


class DegenerateInputError(QHedgeError):
    """Input with no cross-sectional information (e.g. zero price variance)."""


class SingularSystemError(QHedgeError):
    """A regression system stayed singular even after ridge regularization."""


class DataFormatError(QHedgeError):
    """Malformed CSV input (ragged panel, missing time slices, bad header)."""
