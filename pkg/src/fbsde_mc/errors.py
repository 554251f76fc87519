"""Exception types shared across the package."""


class FbsdeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FbsdeError):
    """A model, estimator, or run configuration is invalid or incomplete."""


class SimulationError(FbsdeError):
    """Path simulation failed (non-finite state, ordering violation, ...)."""


class OracleFailure(FbsdeError):
    """A deterministic reference solver could not produce a value."""
