"""Exception hierarchy shared across turbo_attn modules."""


class TurboAttnError(Exception):
    """Base error for turbo_attn."""

    pass


class ConfigError(TurboAttnError, ValueError):
    """An input value or parameter failed validation."""

    pass


class ShapeError(ConfigError):
    """Matrix dimensions do not line up."""

    pass


class ContractViolation(AssertionError):
    """A caller broke a documented precondition."""

    pass
