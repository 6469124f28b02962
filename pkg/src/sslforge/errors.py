"""Exception types raised across the package."""


class SslForgeError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(SslForgeError):
    """Tensor arguments have incompatible or invalid shapes."""


class ArgumentError(SslForgeError):
    """A non-shape argument is out of its documented domain."""


class DegenerateBatchError(SslForgeError):
    """Batch statistics requested over fewer than two elements."""


class NumericError(SslForgeError):
    """An operation on finite inputs produced NaN or Inf."""


class PolicyError(SslForgeError):
    """An augmentation policy is internally inconsistent."""


class FormatError(SslForgeError):
    """A serialized file does not match its documented layout."""


class SplitError(SslForgeError):
    """A dataset split request cannot be satisfied."""


class ConfigError(SslForgeError):
    """A run configuration is invalid or incomplete."""
