"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, everything else 4.
"""


class CdfaError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CdfaError):
    """Invalid or inconsistent configuration."""


class DegenerateGeometryError(CdfaError):
    """Landmarks or polygons too degenerate to process (collinear, < 3 points)."""


class DimensionMismatchError(CdfaError):
    """Array shapes do not line up."""


class InsufficientDataError(CdfaError):
    """A pool, video, or split does not contain enough samples."""


class PolicySimplexError(CdfaError):
    """An augmentation policy vector is not a valid probability distribution."""


class MetricUndefinedError(CdfaError):
    """A metric cannot be computed on the given inputs (e.g. single-class AUC)."""


class DataIntegrityError(CdfaError):
    """Stored or in-memory data violates a corpus invariant."""


class CheckpointError(CdfaError):
    """A checkpoint file is malformed or truncated."""
