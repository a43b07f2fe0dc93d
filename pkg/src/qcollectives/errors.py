"""Exception types shared across the package."""


class QCollectivesError(Exception):
    """Base class for every error raised by this package."""


class DomainError(QCollectivesError, ValueError):
    """An argument value lies outside the documented domain of an operation."""


class ConfigError(QCollectivesError, ValueError):
    """A configuration object is internally inconsistent or unsupported."""


class IntegrityError(QCollectivesError, ValueError):
    """A buffer or tensor fails a structural validity check."""


class ProtocolError(QCollectivesError, RuntimeError):
    """Ranks violated the messaging protocol (deadlock, unbalanced traffic,
    mismatched tensor shapes across ranks)."""
