"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4),
so anything user-facing should raise one of them rather than a bare
ValueError.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run/corpus configuration."""


class DataError(ValueError):
    """Missing or malformed data: unknown ids, bad checkpoints, bad files."""


class ParseError(DataError):
    """A file could not be parsed; message carries the offending line."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) surfaced during training."""
