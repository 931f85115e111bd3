"""Sensitivity analysis for omitted variable bias in linear regression.

The core computations live in :mod:`ovbsens.covkernel`, :mod:`ovbsens.identify`,
:mod:`ovbsens.frontier`, :mod:`ovbsens.simsel` and :mod:`ovbsens.calibrate`.
:mod:`ovbsens.oracle` holds independent brute-force checks.
"""

__version__ = "0.1.0"

from .covkernel import CovarianceModel, NormalizedModel, normalize, partial_out, partial_r2  # noqa: E402
from .identify import (  # noqa: E402
    IdentifiedInterval,
    SensitivityBudget,
    bounds_rx,
    bounds_rx_c,
    breakdown_point_rx,
    breakdown_point_rx_c,
)
from .frontier import bounds_rx_ry, breakdown_frontier, breakdown_frontier_c, common_breakdown  # noqa: E402

__all__ = [
    "CovarianceModel",
    "NormalizedModel",
    "normalize",
    "partial_out",
    "partial_r2",
    "IdentifiedInterval",
    "SensitivityBudget",
    "bounds_rx",
    "bounds_rx_c",
    "breakdown_point_rx",
    "breakdown_point_rx_c",
    "bounds_rx_ry",
    "breakdown_frontier",
    "breakdown_frontier_c",
    "common_breakdown",
]
