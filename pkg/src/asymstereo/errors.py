"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes violate an operation's contract."""


class ParameterError(ValueError):
    """Infeasible or inconsistent user-supplied parameters."""


class ConfigError(ValueError):
    """Malformed configuration file or incompatible config/checkpoint."""


class FormatError(ValueError):
    """Malformed on-disk file (bad header, wrong channel count, ...)."""


class EvaluationError(ValueError):
    """Metric or loss requested over an empty valid-pixel set."""


class NumericsError(RuntimeError):
    """Non-finite values encountered where finite values are required."""
