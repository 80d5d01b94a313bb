"""Exception types shared across the package."""


class FormatError(Exception):
    """Raised when a persisted file has a bad magic, is truncated, or carries
    inconsistent size metadata."""


class NumericalError(Exception):
    """Raised when a numerical procedure fails: Newton non-convergence,
    ODE blow-up, singular interpolation systems, non-positive-definite kernels."""


class ConfigError(Exception):
    """Raised for invalid run configuration (unknown key, bad type, violated
    constraint)."""
