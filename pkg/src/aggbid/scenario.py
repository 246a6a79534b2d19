"""End-to-end runs and the wholesale price-scaling sweep."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .model import BinaryPolicy, ScenarioConfig, UtilityMode, build_model, validate_config
from .pricing import PriceSchedule, ProfitReport, profit_breakdown, recover_prices
from .solver import DispatchSolution, SolverSettings, Status, solve_miqp, solve_relaxed

COMPLEMENTARITY_TOL = 1e-6  # MW^2


class ScenarioResult(NamedTuple):
    solution: DispatchSolution
    prices: PriceSchedule | None
    profit: ProfitReport | None


def solve_dispatch(config: ScenarioConfig, mode=None,
                   settings: SolverSettings | None = None) -> DispatchSolution:
    """Build and solve under the config's binary policy.

    ``auto`` solves without binaries when every station is lossy, then
    falls back to branch-and-bound if the relaxed dispatch charges and
    discharges in the same hour anywhere.
    """
    validate_config(config)
    policy = config.binary_policy
    if policy is BinaryPolicy.RELAXED:
        return solve_relaxed(build_model(config, mode, with_binaries=False), settings)
    if policy is BinaryPolicy.BRANCH_AND_BOUND:
        return solve_miqp(build_model(config, mode, with_binaries=True), settings)

    lossy = all(st.eta_ch * st.eta_di < 1.0 for st in config.stations)
    if lossy:
        sol = solve_relaxed(build_model(config, mode, with_binaries=False), settings)
        if sol.status is not Status.OPTIMAL or sol.max_complementarity() <= COMPLEMENTARITY_TOL:
            sol.diagnostics.policy = "auto:relaxed"
            return sol
    sol = solve_miqp(build_model(config, mode, with_binaries=True), settings)
    sol.diagnostics.policy = "auto:bnb"
    return sol


def run_scenario(config: ScenarioConfig, mode=None,
                 settings: SolverSettings | None = None) -> ScenarioResult:
    """build -> solve -> recover EV prices -> split profit.

    Prices and profits are ``None`` when the solve is not optimal.
    """
    config = config.with_mode(mode)
    sol = solve_dispatch(config, None, settings)
    if not sol.is_optimal:
        return ScenarioResult(sol, None, None)
    schedule = recover_prices(sol, config.utilities)
    return ScenarioResult(sol, schedule, profit_breakdown(sol, config.prices, schedule))


@dataclass(frozen=True)
class SweepConfig:
    k_values: tuple[float, ...] = tuple(float(k) for k in range(1, 31))

    def __post_init__(self):
        ks = tuple(float(k) for k in self.k_values)
        object.__setattr__(self, "k_values", ks)
        if not ks:
            raise ValueError("sweep needs at least one scale factor")
        if any(k <= 0 for k in ks):
            raise ValueError("scale factors must be positive")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("scale factors must be strictly increasing")

    @classmethod
    def from_range(cls, k_min: float, k_max: float, k_step: float) -> "SweepConfig":
        if k_step <= 0:
            raise ValueError("k_step must be positive")
        n = int(np.floor((k_max - k_min) / k_step + 1e-9)) + 1
        return cls(tuple(k_min + i * k_step for i in range(n)))


@dataclass
class SweepRecord:
    k: float
    mode: UtilityMode
    status: Status
    total: float
    wholesale: float
    ev_trading: float
    iterations: int = 0
    bnb_nodes: int = 0
    kkt_residual: float = float("nan")
    policy: str = ""
    final_soc: tuple = ()


@dataclass
class SweepReport:
    records: list[SweepRecord] = field(default_factory=list)

    def for_mode(self, mode) -> list[SweepRecord]:
        mode = UtilityMode(mode)
        return [r for r in self.records if r.mode is mode]

    def series(self, mode, attr: str = "total") -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.for_mode(mode)])


def _sweep_point(config: ScenarioConfig, k: float, mode: UtilityMode, settings) -> SweepRecord:
    scaled = config.with_prices(config.prices.scaled(k))
    try:
        sol, _, profit = run_scenario(scaled, mode, settings)
    except Exception as exc:  # a failed K is recorded, never dropped
        return SweepRecord(k, mode, Status.NUMERICAL_FAILURE, np.nan, np.nan, np.nan,
                           policy=f"error: {exc}")
    d = sol.diagnostics
    if profit is None:
        return SweepRecord(k, mode, sol.status, np.nan, np.nan, np.nan, d.iterations,
                           d.bnb_nodes, d.kkt_residual, d.policy)
    return SweepRecord(k, mode, sol.status, profit.total_profit, profit.wholesale_profit,
                       profit.ev_trading_profit, d.iterations, d.bnb_nodes, d.kkt_residual,
                       d.policy, tuple(float(v) for v in sol.soc[:, -1]))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AGGBID_THREADS", "1")))
    except ValueError:
        return 1


def sweep_price_scale(config: ScenarioConfig, sweep: SweepConfig | None = None,
                      modes: Sequence = (UtilityMode.HOURLY, UtilityMode.TERMINAL),
                      settings: SolverSettings | None = None) -> SweepReport:
    """Solve once per (K, mode) with every wholesale price multiplied by K.

    Records are ordered mode-major, then by K, regardless of threading.
    """
    validate_config(config)
    sweep = sweep or SweepConfig()
    jobs = [(k, UtilityMode(m)) for m in modes for k in sweep.k_values]
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda j: _sweep_point(config, j[0], j[1], settings), jobs))
    else:
        records = [_sweep_point(config, k, m, settings) for k, m in jobs]
    return SweepReport(records)


def second_differences(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v[2:] - 2.0 * v[1:-1] + v[:-2]


def affine_r2(x, y) -> float:
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot
