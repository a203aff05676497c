"""Exception types shared across the package."""


class PyragraphError(Exception):
    """Base class for all package errors."""


class ValidationError(PyragraphError):
    """Input data violates a documented invariant (shape, finiteness, vocabulary)."""


class ContractError(PyragraphError):
    """An API was called outside its contract (non-adjacent pair, mismatched trace)."""


class ConfigError(PyragraphError):
    """A configuration value is invalid or inconsistent."""


class NumericError(PyragraphError):
    """A non-finite value appeared mid-computation.

    Carries the GCN layer index (0-based) when raised inside a layer, else None.
    """

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class TrainingError(PyragraphError):
    """Training diverged. Carries the epoch index where the loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class FileFormatError(PyragraphError):
    """Base class for on-disk format errors."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """File declares an unsupported format version."""


class ChecksumError(FileFormatError):
    """Payload CRC32 does not match the stored checksum."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload is complete."""
