"""Exception types shared across the package."""


class EchoflowError(Exception):
    """Base class for all package-specific errors."""


class FormatError(EchoflowError):
    """A file does not conform to its documented on-disk layout."""


class BadMagicError(FormatError):
    """Container file does not start with the expected magic bytes."""


class DimOverflowError(FormatError):
    """Header dimensions are absurd or would overflow a product computation."""


class TruncatedPayloadError(FormatError):
    """Header dims promise more payload bytes than the file contains."""


class ShapeError(EchoflowError):
    """Array arguments have incompatible shapes."""


class DegenerateInputError(EchoflowError):
    """Input is valid but carries no usable signal for the operation."""


class ManifestError(EchoflowError):
    """A manifest violates its schema or invariants."""


class ArchitectureMismatchError(EchoflowError):
    """Checkpoint architecture descriptor disagrees with the target model."""


class SkipConnectionError(EchoflowError):
    """Relevance propagation was asked to handle a network with skip connections."""


class ConfigError(EchoflowError):
    """Configuration file or override contains unknown or invalid keys."""
