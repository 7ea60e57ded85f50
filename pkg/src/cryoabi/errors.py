"""Exception types shared across the toolkit."""


class CryoabiError(Exception):
    """Base class for all toolkit errors."""


class DegenerateInput(CryoabiError):
    """Raised when a rotation parameterization cannot be resolved (parallel or zero halves)."""


class OutOfHemisphere(CryoabiError):
    """Raised when a direction lies 90 degrees or more from a projection center."""


class EmptyInput(CryoabiError):
    """Raised when an operation requires at least one element."""


class EmptyStack(CryoabiError):
    """Raised when a particle stack has no images."""


class DimensionMismatch(CryoabiError):
    """Raised when grid or array dimensions disagree."""


class StaleCache(CryoabiError):
    """Raised when a slice cache is replayed against a volume it was not built for."""


class NonFiniteLoss(CryoabiError):
    """Raised when candidate losses contain NaN or infinity."""


class CorruptCheckpoint(CryoabiError):
    """Raised when a checkpoint file fails magic, version or length validation."""


class BadMagic(CryoabiError):
    """Raised when an MRC file lacks the expected map stamp."""


class UnsupportedMode(CryoabiError):
    """Raised when an MRC file uses a data mode other than 32-bit float."""


class TruncatedPayload(CryoabiError):
    """Raised when an MRC payload is shorter than the header declares."""


class ConfigError(CryoabiError):
    """Raised on schema violations in run configuration files."""
