"""Exception types shared across the library."""


class LiePsgdError(Exception):
    """Base class for all library-specific errors."""


class DimensionError(LiePsgdError, ValueError):
    """Vector or matrix dimensions are invalid or inconsistent."""


class DegenerateStepError(LiePsgdError, ValueError):
    """A parameter perturbation is too small to carry curvature information."""


class CurvatureError(LiePsgdError, ValueError):
    """A curvature evaluation returned non-finite or otherwise unusable values."""


class NonInvertibleError(LiePsgdError, ValueError):
    """A group element (or one of its blocks) is singular."""


class OracleCapError(LiePsgdError, ValueError):
    """A dense-oracle operation was requested above the configured size cap."""


class IdxFormatError(LiePsgdError, ValueError):
    """An IDX data file is malformed (bad magic, truncated, or inconsistent)."""


class ConfigError(LiePsgdError, ValueError):
    """An experiment or optimizer configuration is invalid."""
