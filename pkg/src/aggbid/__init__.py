"""Bidding and EV pricing for an EV charging-station aggregator."""
__version__ = "0.1.0"

from .model import (BinaryPolicy, MarketPriceSeries, QuadraticProgram, ScenarioConfig,
                    StationParams, UtilityMode, UtilityParams, build_model, convexity_spectrum,
                    validate_config)
from .pricing import PriceSchedule, ProfitReport, profit_breakdown, recover_prices
from .scenario import SweepConfig, SweepReport, run_scenario, sweep_price_scale
from .solver import (DispatchSolution, SolverSettings, Status, kkt_residual, solve_miqp,
                     solve_relaxed)

__all__ = [
    "BinaryPolicy", "MarketPriceSeries", "QuadraticProgram", "ScenarioConfig", "StationParams",
    "UtilityMode", "UtilityParams", "build_model", "convexity_spectrum", "validate_config",
    "PriceSchedule", "ProfitReport", "profit_breakdown", "recover_prices",
    "SweepConfig", "SweepReport", "run_scenario", "sweep_price_scale",
    "DispatchSolution", "SolverSettings", "Status", "kkt_residual", "solve_miqp", "solve_relaxed",
]
