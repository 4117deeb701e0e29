"""Error types shared across the package.

Two families, matching the two nonzero CLI exit codes: DomainError for
mathematically invalid inputs or states reached during a computation
(exit 1), ConfigError for malformed configuration, files, or arguments
(exit 2).
"""

__all__ = ["DomainError", "ConfigError"]


class DomainError(ValueError):
    """Input or state outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Malformed configuration file, option, or data file."""
