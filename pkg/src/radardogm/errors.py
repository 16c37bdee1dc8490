"""Exception types shared across the package."""


class DogmError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(DogmError):
    """Invalid scenario or pipeline configuration."""


class GridMismatchError(DogmError):
    """Grids with different specs or alignment were combined."""


class CodecError(DogmError):
    """Malformed grid snapshot or correction file."""
