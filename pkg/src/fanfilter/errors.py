"""Exception types shared across the package."""


class FanfilterError(Exception):
    """Base class for all package-specific failures."""


class ContractError(FanfilterError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(FanfilterError, ValueError):
    """Parameters outside the mathematical domain of an operation."""


class LutRangeError(FanfilterError, ValueError):
    """Lookup-table query too far outside the tabulated grid."""


class DegenerateFractionError(FanfilterError, ValueError):
    """Volume fraction too small to normalize against."""


class FilterDivergence(FanfilterError, RuntimeError):
    """UKF covariance lost positive definiteness beyond repair."""


class SamplingError(FanfilterError, RuntimeError):
    """Rejection sampler exhausted its proposal budget."""


class MetricError(FanfilterError, ValueError):
    """Invalid input to an evaluation metric."""


class FormatError(FanfilterError, ValueError):
    """Malformed or incompatible input file."""


class ConfigError(FanfilterError, ValueError):
    """Invalid run configuration."""
