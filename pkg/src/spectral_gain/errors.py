"""Exception types shared across the package."""


class ShapeError(ValueError):
    """A tensor shape violates an operation's contract."""


class DataFormatError(ValueError):
    """A dataset or snapshot file is malformed."""


class ConfigError(ValueError):
    """A run configuration is invalid."""


class DivergenceError(RuntimeError):
    """Training produced non-finite losses or gradients."""
