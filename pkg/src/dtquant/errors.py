"""Exception hierarchy shared across the package."""


class DtqError(Exception):
    """Base class for all domain errors; the CLI maps these to exit code 1."""


class ShapeError(DtqError):
    """Tensor operands have incompatible shapes."""


class ContractError(DtqError):
    """An operation was called outside its contract (bad argument, bad state)."""


class ConfigError(DtqError):
    """Invalid or inconsistent configuration."""


class DataError(DtqError):
    """Malformed or insufficient input data."""


class WeightImportError(DtqError):
    """A weight container is missing tensors or has wrong shapes."""


class UndefinedMetricError(DtqError):
    """A metric has no defined value for this input (e.g. zero return variance)."""
