"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, InternalConsistencyError -> 4.
"""


class AscError(Exception):
    """Base class for all package errors."""


class ConfigError(AscError):
    """Invalid or inconsistent configuration."""


class DataError(AscError):
    """Missing, exhausted, or malformed input data."""


class DimensionError(AscError):
    """Shape or length mismatch between operands."""


class AllocationError(AscError):
    """Bandwidth allocation outside the configured value set."""


class DegenerateInputError(AscError):
    """Input on which the operation is mathematically undefined."""


class DecodeError(DataError):
    """Bitstream cannot be decoded (truncated or corrupt)."""


class StreamConfigMismatch(DecodeError):
    """Bitstream header disagrees with the decoder configuration."""


class EvaluationError(AscError):
    """Curve comparison is ill-posed (e.g. no quality overlap)."""


class InternalConsistencyError(AscError):
    """A round-trip or accounting self-check failed; results are not trustworthy."""
