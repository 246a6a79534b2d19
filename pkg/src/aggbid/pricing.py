"""EV price recovery from lower-level stationarity and profit split.

The EV owner's problem is unconstrained, so its optimum is the stationary
point of U(w) - lambda * P.  For the hourly utility this gives
``lambda_t = a - 2 b P_t``; for the terminal utility (w = sum_t P_t) every
hour gets the same price ``a - 2 b sum_j P_j``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import HorizonMismatch, NotOptimal
from .model import MarketPriceSeries, UtilityMode, UtilityParams
from .solver import DispatchSolution


@dataclass(frozen=True)
class PriceSchedule:
    """EV-side prices in $/MWh, shape (K, T)."""

    lam: np.ndarray

    @property
    def negative(self) -> bool:
        return bool(np.any(self.lam < 0))

    def spread(self) -> np.ndarray:
        """Per-station max - min over the horizon."""
        return np.ptp(self.lam, axis=1)


@dataclass(frozen=True)
class ProfitReport:
    wholesale_profit: float
    ev_trading_profit: float
    total_profit: float


def stationarity_price(p_cs, utility: UtilityParams) -> np.ndarray:
    p = np.asarray(p_cs, dtype=float)
    if utility.mode is UtilityMode.HOURLY:
        return utility.a - 2.0 * utility.b * p
    return np.full(p.shape, utility.a - 2.0 * utility.b * float(np.sum(p)))


def recover_prices(solution: DispatchSolution, utilities) -> PriceSchedule:
    """EV price schedule implied by an optimal dispatch.

    Computed analytically from the dispatch, never from solver duals.
    Negative prices are kept and flagged with a warning.
    """
    if not solution.is_optimal:
        raise NotOptimal(f"cannot price a {solution.status.value} solution")
    utilities = tuple(utilities)
    p_cs = solution.p_cs
    if len(utilities) != p_cs.shape[0]:
        raise HorizonMismatch(f"{len(utilities)} utilities for {p_cs.shape[0]} stations")
    lam = np.vstack([stationarity_price(p_cs[k], u) for k, u in enumerate(utilities)])
    schedule = PriceSchedule(lam.reshape(p_cs.shape))
    if schedule.negative:
        warnings.warn("recovered EV price is negative in some hours", RuntimeWarning, stacklevel=2)
    return schedule


def closed_form_ev_profit(p_cs, utilities) -> float:
    """EV-trading revenue after substituting the stationarity price.

    Hourly: sum_t (a P_t - 2 b P_t^2); terminal: a S - 2 b S^2 with S = sum_t P_t.
    """
    p_cs = np.atleast_2d(np.asarray(p_cs, dtype=float))
    total = 0.0
    for k, u in enumerate(utilities):
        if u.mode is UtilityMode.HOURLY:
            total += float(np.sum(u.a * p_cs[k] - 2.0 * u.b * p_cs[k] ** 2))
        else:
            S = float(np.sum(p_cs[k]))
            total += u.a * S - 2.0 * u.b * S * S
    return total


def profit_breakdown(solution: DispatchSolution, prices: MarketPriceSeries,
                     schedule: PriceSchedule) -> ProfitReport:
    pi = prices.as_array()
    p_wm = np.asarray(solution.p_wm, dtype=float)
    lam = np.asarray(schedule.lam, dtype=float)
    p_cs = solution.p_cs
    if p_wm.shape != pi.shape or lam.shape != p_cs.shape:
        raise HorizonMismatch(
            f"horizons differ: prices {pi.shape}, dispatch {p_wm.shape}, schedule {lam.shape}"
        )
    wholesale = float(p_wm @ pi)
    ev = float(np.sum(lam * p_cs))
    return ProfitReport(wholesale, ev, wholesale + ev)
