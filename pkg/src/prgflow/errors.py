"""Exception types shared across the package."""


class ParameterDomainError(ValueError):
    """Warp parameters outside the invertible domain (e.g. 1 + s <= 0)."""


class DegeneracyError(RuntimeError):
    """A numerically degenerate input (rank-deficient system, empty mask, ...)."""


class ConfigError(ValueError):
    """Bad configuration file, key, or value."""
