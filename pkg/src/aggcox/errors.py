"""Exception types shared across the package."""


class AggcoxError(Exception):
    """Base class for all package errors."""


class GeometryError(AggcoxError):
    """Invalid or degenerate geometry. Carries the offending region id when known."""

    def __init__(self, message, region_id=None):
        if region_id is not None:
            message = f"region {region_id!r}: {message}"
        super().__init__(message)
        self.region_id = region_id


class SpectralError(AggcoxError):
    """Circulant embedding failed (too much truncated spectral mass)."""


class AllocationError(AggcoxError):
    """Latent counts cannot be allocated (empty support, bad totals)."""


class ModelError(AggcoxError):
    """Inconsistent model inputs (shape mismatches, non-finite target)."""


class ConfigError(AggcoxError):
    """Run configuration or input file failed validation."""
