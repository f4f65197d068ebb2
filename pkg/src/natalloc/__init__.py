"""Distortion risk measure pricing with natural allocation by line and layer."""

from .allocation import (
    AllocationCurves,
    PricingReport,
    allocation_curves,
    alpha,
    beta,
    equity_cumulative,
    intermediated_price,
    lee_diagram_data,
    loss_cumulative,
    margin_cumulative,
    premium_cumulative,
    price,
    standalone_report,
)
from .discrete import LevelView, OutcomeTable, bind_distortion, collapse, read_table_csv, rho_total
from .distortion import (
    Identity,
    PiecewiseLinear,
    ProportionalHazard,
    TVaRMixture,
    Wang,
    calibrate,
    from_spec,
    tvar,
)
from .errors import (
    CalibrationError,
    DomainError,
    GridError,
    InvariantViolation,
    NatAllocError,
    ParseError,
    UndefinedReturnError,
    UndefinedTailError,
)
from .grid import Gamma, GridPortfolio, GridSpec, Lognormal, PointMass, ShiftedLognormal, convolve_independent, discretize

__version__ = "0.1.0"

__all__ = [
    "AllocationCurves",
    "CalibrationError",
    "DomainError",
    "Gamma",
    "GridError",
    "GridPortfolio",
    "GridSpec",
    "Identity",
    "InvariantViolation",
    "LevelView",
    "Lognormal",
    "NatAllocError",
    "OutcomeTable",
    "ParseError",
    "PiecewiseLinear",
    "PointMass",
    "PricingReport",
    "ProportionalHazard",
    "ShiftedLognormal",
    "TVaRMixture",
    "UndefinedReturnError",
    "UndefinedTailError",
    "Wang",
    "allocation_curves",
    "alpha",
    "beta",
    "bind_distortion",
    "calibrate",
    "collapse",
    "convolve_independent",
    "discretize",
    "equity_cumulative",
    "from_spec",
    "intermediated_price",
    "lee_diagram_data",
    "loss_cumulative",
    "margin_cumulative",
    "premium_cumulative",
    "price",
    "read_table_csv",
    "rho_total",
    "standalone_report",
    "tvar",
]
