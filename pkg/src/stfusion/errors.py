"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, IngestionError -> 3,
anything else raised at runtime -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad field, violated bound, unknown key)."""


class IngestionError(ValueError):
    """A data file failed to parse or had the wrong shape; message carries line/offset."""


class InfeasibleBandError(ValueError):
    """The warping band excludes the endpoint cell, so no alignment exists."""


class UndefinedMetricError(ValueError):
    """A metric was requested over an empty (fully masked) element set."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the history up to the failing epoch."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
