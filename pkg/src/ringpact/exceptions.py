"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
FormatError/DataError -> 2 (data/format), NumericalError -> 3.
"""


class RingPactError(Exception):
    """Base class for all package errors."""


class ConfigError(RingPactError):
    """Invalid configuration or command-line usage."""


class DataError(RingPactError):
    """Inconsistent or invalid domain data (shapes, ranges, geometry)."""


class NumericalError(RingPactError):
    """Optimization or numerical failure (divergence, non-finite loss)."""


class FormatError(RingPactError):
    """Malformed binary file."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(FormatError):
    """Trailing CRC32 does not match the file contents."""


class DimensionError(FormatError):
    """Declared dimensions are zero, absurd, or overflow the payload."""


class MemoryBudgetError(RingPactError):
    """Explicit matrix assembly would exceed the configured memory budget."""
