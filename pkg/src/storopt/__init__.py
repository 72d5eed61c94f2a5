"""Solver toolkit for an energy store used for arbitrage and buffering."""

from .models import (
    RateWindow,
    PriceTakerCost,
    MarketImpactCost,
    PiecewiseLinearCost,
    CostModel,
    ZeroPenalty,
    ExponentialPenalty,
    InversePenalty,
    TabulatedPenalty,
    PenaltyModel,
    PeriodSpec,
    ProblemInstance,
    ValidationReport,
    build_instance,
    cost_eval,
    cost_subgradient,
    argmin_tilted,
    penalty_eval,
    penalty_derivative,
    penalty_derivative_interval,
    validate_instance,
)

__version__ = "0.1.0"
