"""Exception types shared across the package."""


class FacefrontError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FacefrontError, ValueError):
    """Input failed a contract check (shape, range, bounds, ...)."""


class ManifestError(FacefrontError):
    """A dataset manifest is missing, malformed, or inconsistent."""


class CheckpointError(FacefrontError):
    """A checkpoint archive is corrupt or incompatible."""


class ConfigurationError(FacefrontError):
    """A run was configured inconsistently (missing embedder, bad flag, ...)."""


class NumericsError(FacefrontError, FloatingPointError):
    """A numeric quantity became non-finite where the math requires it."""
