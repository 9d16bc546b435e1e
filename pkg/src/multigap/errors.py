"""Exception types shared across the package."""


class MultigapError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MultigapError):
    """Invalid configuration, flags, or input files at run start."""


class ManifestError(MultigapError):
    """Dataset manifest is malformed or violates its invariants."""


class CacheFormatError(MultigapError):
    """Feature cache file is corrupt, truncated, or has the wrong format."""


class ModelGraphError(MultigapError):
    """Inference graph missing, incompatible, or inconsistent with its spec."""


class UndefinedCorrelationError(MultigapError):
    """Correlation is undefined because one input has zero variance."""


class NumericalError(MultigapError):
    """A numerical routine failed beyond recovery (e.g. factorization)."""
