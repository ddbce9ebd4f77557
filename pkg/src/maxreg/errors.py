"""Exception types with machine-readable codes."""


class MaxregError(Exception):
    code = "E_GENERIC"


class ConfigError(MaxregError):
    """Bad experiment configuration (unknown catalog name, bad values)."""

    code = "E_CONFIG"


class CatalogError(ConfigError):
    code = "E_CATALOG"


class SelfTestError(MaxregError):
    """A numerical self-test (quadrature, kernel mass) failed."""

    code = "E_SELFTEST"


class PreconditionError(MaxregError):
    """An input violates the hypothesis of the identity being checked."""

    code = "E_PRECONDITION"


class InvalidCellBudgetError(MaxregError):
    code = "E_INVALID_CELLS"
