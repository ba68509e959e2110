"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, ranges, or otherwise malformed configuration."""


class NumericsError(RuntimeError):
    """A computation produced a non-finite value; the message names the culprit."""


class IngestionError(ValueError):
    """A data file could not be parsed into a dataset."""


class MetricError(ValueError):
    """A fairness metric is undefined for the given groups (e.g. empty group)."""
