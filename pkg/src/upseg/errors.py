"""Error taxonomy shared by all modules.

The CLI maps these onto its stable exit codes (see cli.py).
"""


class UpsegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UpsegError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class DomainError(UpsegError, ValueError):
    """A value is outside the operation's domain (e.g. class index >= N_c)."""


class UsageError(UpsegError, RuntimeError):
    """The API was called in an unsupported way (e.g. backward on non-scalar)."""


class ConfigError(UpsegError, ValueError):
    """Invalid configuration value or unparsable config file."""


class FormatError(UpsegError, ValueError):
    """Malformed tensor-container file."""


class DivergedError(UpsegError, RuntimeError):
    """Training produced a non-finite loss."""


class ArtifactMismatchError(UpsegError, ValueError):
    """Checkpoint does not match the configured model."""
