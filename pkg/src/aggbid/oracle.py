"""Brute-force grid oracle for small instances.

The grid runs over the net injection of every (hour, station) pair.  The
charge/discharge split is taken as complementary (discharge = max(P, 0),
charge = max(-P, 0)); with unit efficiencies simultaneous charge and
discharge only reproduces some net value already on the grid, so both
branches are covered.  State of charge is obtained by forward
substitution and every station constraint is checked pointwise.  Nothing
here touches the QP assembly or the solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooLarge
from .model import ScenarioConfig, UtilityMode, validate_config

MAX_POINTS = 20_000_000
_CHUNK = 400_000
_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 1001
    t_max: int = 3

    def __post_init__(self):
        if self.resolution < 101:
            raise ValueError("grid resolution must be at least 101 points per dimension")
        if not 1 <= self.t_max <= 3:
            raise ValueError("t_max must lie in 1..3")


@dataclass(frozen=True)
class OracleResult:
    p_cs: np.ndarray          # (K, T) best grid point
    objective: float          # maximization-form profit at that point
    bound: float              # Lipschitz constant times grid step
    n_feasible: int
    n_points: int


def _station_ranges(config: ScenarioConfig):
    lo = np.array([-min(s.cr_max, s.p_cap) for s in config.stations])
    hi = np.array([min(s.dr_max, s.p_cap) for s in config.stations])
    return lo, hi


def enumerate_optimal(config: ScenarioConfig, mode=None, grid: GridSpec | None = None) -> OracleResult:
    """Exhaustively maximize the reduced profit over a feasibility-filtered grid.

    Ties go to the lexicographically smallest grid index, with dimensions
    ordered hour-major then station.
    """
    grid = grid or GridSpec()
    validate_config(config)
    config = config.with_mode(mode)
    T, K = config.T, config.n_stations
    if T > grid.t_max or 2 * T * K > 6:
        raise TooLarge(f"T={T}, K={K} exceeds the oracle's dimensionality cap")
    dims = T * K
    n_points = grid.resolution ** dims
    if n_points > MAX_POINTS:
        raise TooLarge(f"{n_points} grid points exceed the cap of {MAX_POINTS}")

    lo, hi = _station_ranges(config)
    axes = [np.linspace(lo[k], hi[k], grid.resolution) for t in range(T) for k in range(K)]
    steps = np.array([(hi[k] - lo[k]) / (grid.resolution - 1) for t in range(T) for k in range(K)])
    pi = config.prices.as_array()

    best_val = -np.inf
    best_idx = -1
    n_feasible = 0
    shape = (grid.resolution,) * dims
    for start in range(0, n_points, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, n_points))
        coords = np.unravel_index(flat, shape)
        P = np.stack([axes[d][coords[d]] for d in range(dims)], axis=1).reshape(-1, T, K)
        feasible = np.ones(P.shape[0], dtype=bool)
        value = P.sum(axis=2) @ pi
        for k, (st, ut) in enumerate(zip(config.stations, config.utilities)):
            p = P[:, :, k]
            di = np.maximum(p, 0.0)
            ch = np.maximum(-p, 0.0)
            soc = st.e_initial + np.cumsum(st.eta_ch * ch - di / st.eta_di, axis=1)
            feasible &= np.all(soc >= st.e_min - _FEAS_TOL, axis=1)
            feasible &= np.all(soc <= st.e_max + _FEAS_TOL, axis=1)
            feasible &= soc[:, -1] >= st.terminal_floor - _FEAS_TOL
            if ut.mode is UtilityMode.HOURLY:
                value = value + np.sum(ut.a * p - 2.0 * ut.b * p * p, axis=1)
            else:
                S = p.sum(axis=1)
                value = value + ut.a * S - 2.0 * ut.b * S * S
        n_feasible += int(feasible.sum())
        if not feasible.any():
            continue
        masked = np.where(feasible, value, -np.inf)
        i = int(np.argmax(masked))
        if masked[i] > best_val:
            best_val = float(masked[i])
            best_idx = int(flat[i])

    if best_idx < 0:
        return OracleResult(np.full((K, T), np.nan), -np.inf, np.inf, 0, n_points)
    coords = np.unravel_index(best_idx, shape)
    p_best = np.array([axes[d][coords[d]] for d in range(dims)]).reshape(T, K).T
    return OracleResult(p_best, best_val, lipschitz_bound(config, steps), n_feasible, n_points)


def lipschitz_bound(config: ScenarioConfig, steps) -> float:
    """Sum over grid dimensions of (max |d profit / d P| on the box) * step."""
    T, K = config.T, config.n_stations
    lo, hi = _station_ranges(config)
    pi = config.prices.as_array()
    steps = np.asarray(steps, dtype=float).reshape(T, K)
    total = 0.0
    for k, ut in enumerate(config.utilities):
        pmax = max(abs(lo[k]), abs(hi[k]))
        reach = pmax if ut.mode is UtilityMode.HOURLY else T * pmax
        for t in range(T):
            grad = abs(pi[t] + ut.a) + 4.0 * ut.b * reach
            total += grad * steps[t, k]
    return total


def compare_with_solver(config: ScenarioConfig, solver_profit: float, mode=None,
                        grid: GridSpec | None = None, slack: float = 1e-9):
    """Return (oracle_result, agrees).

    The grid point is feasible for the solver's problem, so the solver may
    not lose to it; and the solver may beat it by at most the grid bound.
    """
    res = enumerate_optimal(config, mode, grid)
    scale = slack * max(1.0, abs(solver_profit))
    agrees = (solver_profit >= res.objective - scale
              and solver_profit - res.objective <= res.bound + scale)
    return res, bool(agrees)
