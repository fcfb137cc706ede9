"""Exception types shared across the package."""


class SfcadError(Exception):
    """Base class; the CLI turns these into machine-readable error records."""


class DimensionError(SfcadError, ValueError):
    pass


class ContractError(SfcadError, ValueError):
    pass


class CapacityError(SfcadError, ValueError):
    pass


class ConfigError(SfcadError, ValueError):
    pass


class IntegrityError(SfcadError, ValueError):
    pass


class ParseError(SfcadError, ValueError):
    pass
