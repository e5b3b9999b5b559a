"""Shared exception types, grouped by the CLI exit code they map to."""


class ConfigError(Exception):
    """Invalid configuration (unknown key, bad enum value, missing field). Exit code 1."""


class DataError(Exception):
    """Invalid or missing input data (bad CSV row, absent file). Exit code 2."""


class NumericalError(Exception):
    """Numerical failure (degenerate series, divergence, failed gradient check). Exit code 3."""


class ShapeError(ValueError):
    """Tensor shape mismatch; message names both shapes."""


class DegenerateSeriesError(NumericalError):
    """A price or signal series has zero variance where a normalizer needs it."""


class DegenerateSeriesWarning(UserWarning):
    """A firm with constant returns was neutralised instead of failing the run."""


class TrainingDiverged(NumericalError):
    """Training loss became non-finite; the grid cell is reported as failed."""
