"""Error taxonomy shared across the package.

All errors derive from builtin exception types so callers that do not care
about the distinction can catch ValueError / ArithmeticError as usual.
"""


class ShapeError(ValueError):
    """An input array has the wrong dimension or an inconsistent shape."""


class ContractError(ValueError):
    """An operation was called in a way that violates its contract
    (e.g. backpropagating from a non-scalar output)."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent with other settings."""


class NumericError(ArithmeticError):
    """A numeric quantity became NaN or otherwise unusable."""
