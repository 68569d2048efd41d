class RTBPNError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RTBPNError, ValueError):
    pass


class IngestionError(RTBPNError):
    """A manifest or feature file could not be loaded consistently."""


class ContractViolation(RTBPNError):
    """Raised when training code reaches for ground truth it must not see."""
