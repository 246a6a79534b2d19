"""Domain types and assembly of the single-level aggregator QP.

The upper level maximizes wholesale revenue plus revenue from trading with
the EV; the lower level (EV owner's quadratic utility) is unconstrained, so
its stationarity condition gives the EV price in closed form and the
bilinear price-times-power term collapses into a concave quadratic.  What
is assembled here is the minimization form of that reduced problem:

    min  1/2 x'Hx + c'x + const
    s.t. A_eq x = b_eq,  l_in <= A_in x <= u_in,  lb <= x <= ub

Time steps are one hour; energies are in MWh and powers in MW.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import Issue, ValidationError

ROLES = ("P_di", "P_ch", "E", "P_WM", "b")


class UtilityMode(str, Enum):
    HOURLY = "hourly"
    TERMINAL = "terminal"


class BinaryPolicy(str, Enum):
    RELAXED = "relaxed"
    BRANCH_AND_BOUND = "bnb"
    AUTO = "auto"


@dataclass(frozen=True)
class MarketPriceSeries:
    """Hourly wholesale prices in $/MWh."""

    prices: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))

    @property
    def horizon(self) -> int:
        return len(self.prices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.prices, dtype=float)

    def scaled(self, factor: float) -> "MarketPriceSeries":
        return MarketPriceSeries(tuple(factor * p for p in self.prices))


@dataclass(frozen=True)
class StationParams:
    """Physical parameters of the EV parked at one charging station."""

    e_initial: float
    e_min: float
    e_max: float
    eta_ch: float
    eta_di: float
    cr_max: float
    dr_max: float
    p_cap: float
    terminal_soc_fraction: float = 0.5

    @property
    def terminal_floor(self) -> float:
        return self.terminal_soc_fraction * self.e_max


@dataclass(frozen=True)
class UtilityParams:
    """EV owner's utility U(w) = a*w - b*w**2 and the commodity it values."""

    a: float
    b: float
    mode: UtilityMode = UtilityMode.HOURLY

    def __post_init__(self):
        object.__setattr__(self, "mode", UtilityMode(self.mode))


@dataclass(frozen=True)
class ScenarioConfig:
    stations: tuple[StationParams, ...]
    utilities: tuple[UtilityParams, ...]
    prices: MarketPriceSeries
    binary_policy: BinaryPolicy = BinaryPolicy.AUTO
    # Optional declared horizon, checked against the price series.
    horizon: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        object.__setattr__(self, "utilities", tuple(self.utilities))
        object.__setattr__(self, "binary_policy", BinaryPolicy(self.binary_policy))

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def T(self) -> int:
        return self.prices.horizon

    def with_mode(self, mode: UtilityMode | str | None) -> "ScenarioConfig":
        if mode is None:
            return self
        mode = UtilityMode(mode)
        return replace(self, utilities=tuple(replace(u, mode=mode) for u in self.utilities))

    def with_prices(self, prices: MarketPriceSeries) -> "ScenarioConfig":
        return replace(self, prices=prices, horizon=None)

    def with_policy(self, policy: BinaryPolicy | str) -> "ScenarioConfig":
        return replace(self, binary_policy=BinaryPolicy(policy))


def _finite(*values) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def validate_config(config: ScenarioConfig) -> ScenarioConfig:
    """Return ``config`` unchanged if every invariant holds.

    Otherwise raise :class:`ValidationError` carrying one :class:`Issue` per
    violated invariant, each tagged with the station index and field name.
    """
    issues: list[Issue] = []
    prices = config.prices.prices
    if len(prices) < 1:
        issues.append(Issue("InvalidPrices", "prices", "at least one hourly price is required"))
    bad = [t + 1 for t, p in enumerate(prices) if not math.isfinite(p)]
    if bad:
        issues.append(Issue("InvalidPrices", "prices", f"non-finite price at hours {bad}"))
    if config.horizon is not None and config.horizon != len(prices):
        issues.append(
            Issue("HorizonMismatch", "horizon",
                  f"declared horizon {config.horizon} but {len(prices)} prices given")
        )
    if not config.stations:
        issues.append(Issue("NoStations", "stations", "at least one station is required"))
    if len(config.utilities) != len(config.stations):
        issues.append(
            Issue("HorizonMismatch", "utilities",
                  f"{len(config.utilities)} utility blocks for {len(config.stations)} stations")
        )

    for k, st in enumerate(config.stations):
        names = ("e_initial", "e_min", "e_max", "eta_ch", "eta_di", "cr_max", "dr_max",
                 "p_cap", "terminal_soc_fraction")
        nonfinite = [n for n in names if not _finite(getattr(st, n))]
        for n in nonfinite:
            issues.append(Issue("InvalidValue", n, "must be a finite number", k))
        if nonfinite:
            continue
        if st.e_max <= 0:
            issues.append(Issue("InvalidBounds", "e_max", f"must be > 0, got {st.e_max}", k))
        if st.e_min < 0:
            issues.append(Issue("InvalidBounds", "e_min", f"must be >= 0, got {st.e_min}", k))
        if st.e_initial < st.e_min:
            issues.append(Issue("InvalidBounds", "e_initial",
                                f"{st.e_initial} is below e_min {st.e_min}", k))
        if st.e_initial > st.e_max:
            issues.append(Issue("InvalidBounds", "e_initial",
                                f"{st.e_initial} exceeds e_max {st.e_max}", k))
        if st.e_min > st.e_max:
            issues.append(Issue("InvalidBounds", "e_min",
                                f"{st.e_min} exceeds e_max {st.e_max}", k))
        for n in ("eta_ch", "eta_di"):
            v = getattr(st, n)
            if not 0.0 < v <= 1.0:
                issues.append(Issue("InvalidEfficiency", n, f"must lie in (0, 1], got {v}", k))
        for n in ("cr_max", "dr_max", "p_cap"):
            v = getattr(st, n)
            if v <= 0:
                issues.append(Issue("InvalidRate", n, f"must be > 0, got {v}", k))
        if st.e_max > 0:
            lo = st.e_min / st.e_max
            f = st.terminal_soc_fraction
            if not lo <= f <= 1.0:
                issues.append(Issue("InvalidTerminalFraction", "terminal_soc_fraction",
                                    f"must lie in [{lo:g}, 1], got {f}", k))

    for k, u in enumerate(config.utilities):
        if not _finite(u.a):
            issues.append(Issue("InvalidValue", "a", "must be a finite number", k))
        if not _finite(u.b):
            issues.append(Issue("InvalidValue", "b", "must be a finite number", k))
        elif u.b < 0:
            issues.append(Issue("NegativeB", "b", f"utility must be concave, got b={u.b}", k))

    if issues:
        raise ValidationError(issues)
    return config


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """Minimization-form QP with optional binary columns.

    ``var_index_map`` keys are ``(role, t, k)`` with ``k=None`` for the
    aggregate market injection.  ``tiebreak_cost`` is an optional secondary
    linear objective minimized over the optimal face.
    """

    hessian: np.ndarray
    linear_cost: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    ineq_matrix: np.ndarray
    ineq_lower: np.ndarray
    ineq_upper: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constant: float = 0.0
    binary_indices: tuple[int, ...] = ()
    var_index_map: dict = field(default_factory=dict)
    tiebreak_cost: np.ndarray | None = None
    horizon: int = 0
    n_stations: int = 0
    eq_labels: tuple = ()
    ineq_labels: tuple = ()

    @classmethod
    def create(cls, hessian, linear_cost, *, eq_matrix=None, eq_rhs=None, ineq_matrix=None,
               ineq_lower=None, ineq_upper=None, lower=None, upper=None, constant=0.0,
               binary_indices=()):
        """Build a generic QP; omitted blocks default to empty / unbounded."""
        c = np.asarray(linear_cost, dtype=float).ravel()
        n = c.size
        H = np.asarray(hessian, dtype=float).reshape(n, n)
        A = np.zeros((0, n)) if eq_matrix is None else np.asarray(eq_matrix, float).reshape(-1, n)
        beq = np.zeros(A.shape[0]) if eq_rhs is None else np.asarray(eq_rhs, float).ravel()
        G = np.zeros((0, n)) if ineq_matrix is None else np.asarray(ineq_matrix, float).reshape(-1, n)
        m = G.shape[0]
        lo = np.full(m, -np.inf) if ineq_lower is None else np.asarray(ineq_lower, float).ravel()
        hi = np.full(m, np.inf) if ineq_upper is None else np.asarray(ineq_upper, float).ravel()
        lb = np.full(n, -np.inf) if lower is None else np.asarray(lower, float).ravel()
        ub = np.full(n, np.inf) if upper is None else np.asarray(upper, float).ravel()
        return cls(H, c, A, beq, G, lo, hi, lb, ub, float(constant), tuple(binary_indices))

    @property
    def n_vars(self) -> int:
        return self.linear_cost.size

    @property
    def columns(self) -> list:
        cols = [None] * self.n_vars
        for key, j in self.var_index_map.items():
            cols[j] = key
        return cols

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear_cost @ x + self.constant)

    def with_bounds(self, lower, upper) -> "QuadraticProgram":
        return replace(self, lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def columns_of(self, role: str) -> np.ndarray:
        """Column indices of ``role`` as a (K, T) array (or (T,) for P_WM)."""
        if role == "P_WM":
            return np.array([self.var_index_map[(role, t, None)] for t in range(self.horizon)])
        return np.array([[self.var_index_map[(role, t, k)] for t in range(self.horizon)]
                         for k in range(self.n_stations)], dtype=int).reshape(self.n_stations,
                                                                              self.horizon)


def build_model(config: ScenarioConfig, mode: UtilityMode | str | None = None,
                with_binaries: bool | None = None) -> QuadraticProgram:
    """Assemble the reduced single-level QP for ``config``.

    ``mode`` overrides every station's utility mode when given.  Binary
    columns (and the big-M rows coupling them to the charge/discharge
    powers) are only added under the branch-and-bound policy unless
    ``with_binaries`` says otherwise.
    """
    validate_config(config)
    config = config.with_mode(mode)
    if with_binaries is None:
        with_binaries = config.binary_policy is BinaryPolicy.BRANCH_AND_BOUND
    T, K = config.T, config.n_stations
    pi = config.prices.as_array()

    index: dict = {}
    for t in range(T):
        for k in range(K):
            for role in ("P_di", "P_ch", "E"):
                index[(role, t, k)] = len(index)
    for t in range(T):
        index[("P_WM", t, None)] = len(index)
    binary_indices = []
    if with_binaries:
        for t in range(T):
            for k in range(K):
                index[("b", t, k)] = len(index)
                binary_indices.append(index[("b", t, k)])
    n = len(index)

    H = np.zeros((n, n))
    c = np.zeros(n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    eq_rows, eq_rhs, eq_labels = [], [], []
    in_rows, in_lo, in_hi, in_labels = [], [], [], []

    def row():
        return np.zeros(n)

    for t in range(T):
        c[index[("P_WM", t, None)]] = -pi[t]
        r = row()
        r[index[("P_WM", t, None)]] = 1.0
        for k in range(K):
            r[index[("P_di", t, k)]] = -1.0
            r[index[("P_ch", t, k)]] = 1.0
        eq_rows.append(r)
        eq_rhs.append(0.0)
        eq_labels.append(("aggregate", t, None))

    for k, (st, ut) in enumerate(zip(config.stations, config.utilities)):
        di = [index[("P_di", t, k)] for t in range(T)]
        ch = [index[("P_ch", t, k)] for t in range(T)]
        en = [index[("E", t, k)] for t in range(T)]
        c[di] -= ut.a
        c[ch] += ut.a
        if ut.mode is UtilityMode.HOURLY:
            for t in range(T):
                i, j = di[t], ch[t]
                H[i, i] += 4 * ut.b
                H[j, j] += 4 * ut.b
                H[i, j] -= 4 * ut.b
                H[j, i] -= 4 * ut.b
        else:
            v = np.zeros(n)
            v[di] = 1.0
            v[ch] = -1.0
            H += 4 * ut.b * np.outer(v, v)

        for t in range(T):
            r = row()
            r[en[t]] = 1.0
            r[di[t]] = 1.0 / st.eta_di
            r[ch[t]] = -st.eta_ch
            if t == 0:
                eq_rhs.append(st.e_initial)
            else:
                r[en[t - 1]] = -1.0
                eq_rhs.append(0.0)
            eq_rows.append(r)
            eq_labels.append(("soc", t, k))

            lb[en[t]], ub[en[t]] = st.e_min, st.e_max
            lb[di[t]], ub[di[t]] = 0.0, st.dr_max
            lb[ch[t]], ub[ch[t]] = 0.0, st.cr_max

            r = row()
            r[di[t]], r[ch[t]] = 1.0, -1.0
            in_rows.append(r)
            in_lo.append(-st.p_cap)
            in_hi.append(st.p_cap)
            in_labels.append(("hosting", t, k))

            if with_binaries:
                bj = index[("b", t, k)]
                lb[bj], ub[bj] = 0.0, 1.0
                r = row()
                r[di[t]], r[bj] = 1.0, -st.dr_max
                in_rows.append(r)
                in_lo.append(-np.inf)
                in_hi.append(0.0)
                in_labels.append(("discharge_mode", t, k))
                r = row()
                r[ch[t]], r[bj] = 1.0, st.cr_max
                in_rows.append(r)
                in_lo.append(-np.inf)
                in_hi.append(st.cr_max)
                in_labels.append(("charge_mode", t, k))

        r = row()
        r[en[T - 1]] = 1.0
        in_rows.append(r)
        in_lo.append(st.terminal_floor)
        in_hi.append(st.e_max)
        in_labels.append(("terminal", T - 1, k))

    # Among tied optima prefer the least charge+discharge throughput.
    tiebreak = np.zeros(n)
    tiebreak[[j for key, j in index.items() if key[0] in ("P_di", "P_ch")]] = 1.0

    return QuadraticProgram(
        hessian=H,
        linear_cost=c,
        eq_matrix=np.array(eq_rows).reshape(-1, n),
        eq_rhs=np.array(eq_rhs, dtype=float),
        ineq_matrix=np.array(in_rows).reshape(-1, n),
        ineq_lower=np.array(in_lo, dtype=float),
        ineq_upper=np.array(in_hi, dtype=float),
        lower=lb,
        upper=ub,
        binary_indices=tuple(binary_indices),
        var_index_map=index,
        tiebreak_cost=tiebreak,
        horizon=T,
        n_stations=K,
        eq_labels=tuple(eq_labels),
        ineq_labels=tuple(in_labels),
    )


def rank_one_spectrum(u: Sequence[float]) -> tuple[float, ...]:
    """Eigenvalues of u u' in descending order: ||u||^2 then zeros."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        return ()
    return (float(u @ u),) + (0.0,) * (u.size - 1)


def convexity_spectrum(T: int) -> tuple[float, ...]:
    """Eigenvalue multiset of the T-by-T all-ones matrix, {T, 0, ..., 0}.

    The ones matrix is 1 1', so its nonzero eigenvalue is 1'1 = T with
    eigenvector 1, and everything orthogonal to 1 lies in its null space.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"horizon must be a positive integer, got {T!r}")
    return rank_one_spectrum(np.ones(int(T)))


def constraint_residuals(config: ScenarioConfig, solution, check_binaries: bool = True) -> dict:
    """Worst violation of each station constraint family at a dispatch.

    Works from the dispatch time series alone (not from the QP rows), so it
    can be used to audit any solution.  Values are >= 0, in MW or MWh.
    """
    T, K = config.T, config.n_stations
    p_di = np.asarray(solution.p_di, float).reshape(K, T)
    p_ch = np.asarray(solution.p_ch, float).reshape(K, T)
    soc = np.asarray(solution.soc, float).reshape(K, T)
    p_cs = np.asarray(solution.p_cs, float).reshape(K, T)
    p_wm = np.asarray(solution.p_wm, float).reshape(T)
    out = {
        "aggregate": float(np.max(np.abs(p_wm - p_cs.sum(axis=0)))),
        "injection": float(np.max(np.abs(p_cs - (p_di - p_ch)))),
    }
    soc_res = bounds = rates = terminal = hosting = 0.0
    binaries = getattr(solution, "binaries", None)
    for k, st in enumerate(config.stations):
        prev = np.concatenate(([st.e_initial], soc[k, :-1]))
        soc_res = max(soc_res, float(np.max(np.abs(
            soc[k] - (prev - p_di[k] / st.eta_di + st.eta_ch * p_ch[k])))))
        bounds = max(bounds, float(np.max(np.maximum(st.e_min - soc[k], soc[k] - st.e_max))))
        rate_viol = np.maximum.reduce([-p_di[k], p_di[k] - st.dr_max, -p_ch[k], p_ch[k] - st.cr_max])
        rates = max(rates, float(np.max(rate_viol)))
        if check_binaries and binaries is not None:
            bk = np.asarray(binaries, float).reshape(K, T)[k]
            rates = max(rates, float(np.max(np.maximum(p_di[k] - bk * st.dr_max,
                                                       p_ch[k] - (1 - bk) * st.cr_max))))
        final = st.e_initial + float(np.sum(p_ch[k] * st.eta_ch - p_di[k] / st.eta_di))
        terminal = max(terminal, st.terminal_floor - final, final - st.e_max)
        hosting = max(hosting, float(np.max(np.abs(p_cs[k]) - st.p_cap)))
    out.update(soc=soc_res, soc_bounds=max(bounds, 0.0), rates=max(rates, 0.0),
               terminal=max(terminal, 0.0), hosting=max(hosting, 0.0))
    return out
