"""Exception types shared across the package."""


class VoxelNasError(Exception):
    """Base class for all package errors."""


class DimensionError(VoxelNasError, ValueError):
    """Array rank/shape does not match what an operation requires."""


class ArgumentError(VoxelNasError, ValueError):
    """A scalar argument is out of its valid range."""


class ConfigError(VoxelNasError, ValueError):
    """A configuration object is internally inconsistent."""


class StateError(VoxelNasError, RuntimeError):
    """An object is not in a state that permits the requested operation."""


class FormatError(VoxelNasError, ValueError):
    """A file does not conform to its on-disk format."""


class NumericsError(VoxelNasError, RuntimeError):
    """A computation produced non-finite values."""
