"""Anisotropic-fanning-aware tractography on order-6 fODF tensor fields.

Streamlines are propagated by an Unscented Kalman Filter whose per-fiber
state is a Bingham distribution over directions, so fanning geometry is
carried along the tract instead of collapsing to a single peak.
"""

__version__ = "1.0.0"

from .errors import (ConfigError, ContractError, DegenerateFractionError,
                     DomainError, FanfilterError, FilterDivergence,
                     FormatError, LutRangeError, MetricError, SamplingError)

__all__ = [
    "ConfigError", "ContractError", "DegenerateFractionError", "DomainError",
    "FanfilterError", "FilterDivergence", "FormatError", "LutRangeError",
    "MetricError", "SamplingError", "__version__",
]
