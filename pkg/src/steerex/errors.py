"""Shared exception types."""


class ConfigError(ValueError):
    """A configuration is structurally invalid or inconsistent with the data."""


class TrainingFault(RuntimeError):
    """Training hit a fault (NaN loss, empty dataset, failed scaling)."""
