"""Exception types shared across the toolkit."""


class WalexError(Exception):
    """Base class for all toolkit errors."""


class OutOfRangeError(WalexError):
    """A joint angle or piston position lies outside its allowed range."""


class SingularError(WalexError):
    """A kinematic mapping is degenerate (e.g. vanishing moment arm)."""


class ModelError(WalexError):
    """Model terms are non-finite or otherwise unusable."""


class InfeasibleError(WalexError):
    """A hard (top-priority) constraint set is inconsistent."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SingularInformationError(WalexError):
    """The whitened normal equations of the filter are rank deficient."""


class OutOfDomainError(WalexError):
    """A lookup (spline time, interpolation) lies outside the data domain."""


class ConfigError(WalexError):
    """A configuration file violates the documented schema."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InsufficientExcitationError(WalexError):
    """System identification data has too little coherence over the band."""
