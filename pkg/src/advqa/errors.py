"""Shared exception types. CLI maps these to exit code 2."""


class ConfigurationError(ValueError):
    """Invalid configuration or geometry (user-fixable)."""


class ContractError(ValueError):
    """An operation's precondition was violated."""


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""
