"""Exception types raised across the package."""


class DFLError(Exception):
    """Base class for all package errors."""


class ContractViolation(DFLError, ValueError):
    """An operation was called with inputs outside its contract."""


class InvalidTaskError(DFLError, ValueError):
    pass


class ProtocolStateError(DFLError, KeyError):
    pass


class DegenerateTopologyError(DFLError, ValueError):
    pass


class EstimationError(DFLError, RuntimeError):
    pass


class ConfigError(DFLError, ValueError):
    pass


class StalenessViolation(DFLError, RuntimeError):
    """Realized staleness exceeded the configured bound."""


class SchemaError(DFLError, ValueError):
    pass
