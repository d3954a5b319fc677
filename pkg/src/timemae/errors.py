"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 2,
data/format problems exit 3, training divergence exits 4.
"""


class TimeMaeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TimeMaeError):
    """Invalid configuration key, value, or combination."""


class DimensionError(TimeMaeError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(TimeMaeError):
    """A documented precondition or API contract was violated."""


class UnsupportedOpError(TimeMaeError):
    """An operation without a registered backward rule entered the tape."""


class FormatError(TimeMaeError):
    """A file does not follow its declared on-disk format."""


class CorruptionError(FormatError):
    """A file follows the format but its payload is inconsistent."""


class DataError(TimeMaeError):
    """Loaded data violates value constraints (non-finite, bad label, ...)."""


class CompatibilityError(TimeMaeError):
    """A checkpoint does not match the data or config it is used with."""


class DivergenceError(TimeMaeError):
    """Training produced a non-finite loss; run halted."""


class OracleError(TimeMaeError):
    """A verification oracle was invoked under invalid conditions."""
