"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(ValueError):
    """A caller violated an interface contract (bad shape, missing state, ...)."""


class InvalidActionError(ValueError):
    """An actuator level outside its configured level set."""


class RuleNotFoundError(KeyError):
    """A rule id that is not present in the store."""


class ProtectedRuleError(ValueError):
    """Attempt to delete a hand-authored rule, which is immutable."""
