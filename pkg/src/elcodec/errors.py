"""Exception hierarchy shared across the package."""


class ELCodecError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ELCodecError, ValueError):
    """Tensor or frame shapes do not line up."""


class ArchitectureMismatch(ELCodecError, ValueError):
    """Two models do not share the same layer table."""


class DecodeError(ELCodecError):
    """A coded stream is truncated, corrupt, or of an unknown format."""


class NumericError(ELCodecError, FloatingPointError):
    """A non-finite value showed up where it must not."""


class IngestError(ELCodecError):
    """External base-layer material could not be read."""


class SizeMismatch(IngestError):
    pass


class TruncatedFile(IngestError):
    pass


class MalformedRateLog(IngestError):
    pass


class ConfigError(ELCodecError, ValueError):
    """A run or network configuration is invalid."""
