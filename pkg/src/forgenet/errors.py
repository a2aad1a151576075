"""Exception hierarchy shared across the package."""


class ForgenetError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(ForgenetError, ValueError):
    """Tensor or image dimensions are inconsistent with the operation."""


class NumericError(ForgenetError, ArithmeticError):
    """Non-finite values or numerically impossible inputs."""


class ConfigError(ForgenetError, ValueError):
    """Invalid architecture, profile, or hyperparameter configuration."""


class FormatError(ForgenetError, ValueError):
    """Corrupt or unsupported serialized data (checkpoints, JPEG streams)."""


class UsageError(ForgenetError, ValueError):
    """An API was called in a way its contract forbids."""


class InputError(ForgenetError, ValueError):
    """User-supplied files or values cannot be used (bad paths, undecodable images)."""
