"""Exception types shared across the toolkit."""


class CatesuiteError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CatesuiteError):
    """Bad input data: schema violations, malformed values, shape mismatches."""


class ConfigError(CatesuiteError):
    """Invalid specification or configuration values."""


class EstimationError(CatesuiteError):
    """An estimator could not be fit or evaluated on the given data."""
