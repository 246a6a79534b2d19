import itertools
import types

import numpy as np
import pytest

from aggbid.errors import TooLarge
from aggbid.io import parse_config
from aggbid.model import build_model, constraint_residuals
from aggbid.oracle import GridSpec, compare_with_solver, enumerate_optimal, lipschitz_bound
from aggbid.scenario import solve_dispatch
from aggbid.solver import Status, solve_miqp, solve_qp, solve_relaxed

from conftest import random_config, single_station


def _as_dispatch(config, p_cs):
    """Complementary dispatch for a grid point, with SOC by forward substitution."""
    p_di, p_ch = np.maximum(p_cs, 0.0), np.maximum(-p_cs, 0.0)
    soc = np.vstack([st.e_initial + np.cumsum(st.eta_ch * p_ch[k] - p_di[k] / st.eta_di)
                     for k, st in enumerate(config.stations)])
    return types.SimpleNamespace(p_di=p_di, p_ch=p_ch, soc=soc, p_cs=p_cs, p_wm=p_cs.sum(axis=0))


def test_single_hour_check_case():
    cfg = parse_config("derived_t1.cfg")
    res = enumerate_optimal(cfg)
    # -0.12 sits exactly on the 1001-point grid over [-0.6, 0.6]
    assert res.p_cs[0, 0] == pytest.approx(-0.12, abs=1e-12)
    assert res.objective == pytest.approx(-59.616, abs=1e-9)
    sol = solve_relaxed(build_model(cfg))
    _, agrees = compare_with_solver(cfg, sol.profit)
    assert agrees


def test_two_hour_arbitrage():
    cfg = parse_config("arbitrage_t2.cfg")
    res, agrees = compare_with_solver(cfg, solve_relaxed(build_model(cfg)).profit)
    assert agrees
    assert res.objective == pytest.approx(25.8, abs=res.bound)


def test_zero_price_and_zero_marginal_utility_cannot_profit():
    cfg = single_station([0.0, 0.0], a=0.0, b=100.0)
    res = enumerate_optimal(cfg, grid=GridSpec(resolution=201))
    assert res.objective <= 0.0
    assert solve_relaxed(build_model(cfg)).profit <= 1e-12


@pytest.mark.parametrize("T, K, res", [(4, 1, 101), (2, 2, 101), (3, 1, 1001)])
def test_too_large(T, K, res):
    cfg = random_config(np.random.default_rng(0), T, K)
    with pytest.raises(TooLarge):
        enumerate_optimal(cfg, grid=GridSpec(resolution=res, t_max=3))


def test_grid_spec_limits():
    with pytest.raises(ValueError):
        GridSpec(resolution=50)
    with pytest.raises(ValueError):
        GridSpec(t_max=4)


@pytest.mark.parametrize("mode", ["hourly", "terminal"])
def test_returned_point_is_feasible_and_solver_agrees(mode):
    rng = np.random.default_rng(21)
    for _ in range(6):
        T = int(rng.integers(1, 3))
        cfg = random_config(rng, T, mode=mode)
        res = enumerate_optimal(cfg, grid=GridSpec(resolution=301))
        assert np.isfinite(res.objective)
        viol = constraint_residuals(cfg, _as_dispatch(cfg, res.p_cs), check_binaries=False)
        assert max(viol.values()) <= 1e-9
        sol = solve_relaxed(build_model(cfg, with_binaries=False))
        assert sol.profit >= res.objective - 1e-9
        assert sol.profit - res.objective <= res.bound


def test_three_stations_one_hour():
    rng = np.random.default_rng(2)
    cfg = random_config(rng, 1, n_stations=3)
    res, agrees = compare_with_solver(cfg, solve_relaxed(build_model(cfg)).profit,
                                      grid=GridSpec(resolution=101))
    assert res.n_points == 101 ** 3
    assert agrees


def test_bound_shrinks_with_resolution():
    cfg = parse_config("arbitrage_t2.cfg")
    steps = lambda r: np.full(2, 1.2 / (r - 1))
    assert lipschitz_bound(cfg, steps(2001)) < lipschitz_bound(cfg, steps(1001))


def _burning_terminal_config(policy="auto"):
    # lossy station, SOC saturates after the cheap hour; terminal utility
    # rewards pushing S = P1 + P2 down towards a / 4b
    return single_station([9.7, 146.0], a=157.7, b=225.9, mode="terminal", policy=policy,
                          e_initial=0.75, e_min=0.25, e_max=0.89, cr_max=0.89, dr_max=0.39,
                          p_cap=0.67, terminal_soc_fraction=0.54, eta_ch=0.82, eta_di=0.975)


def test_lossy_terminal_relaxation_burns_energy_and_oracle_sides_with_bnb():
    cfg = _burning_terminal_config()
    relaxed = solve_relaxed(build_model(cfg, with_binaries=False))
    assert relaxed.max_complementarity() > 1e-3
    bnb = solve_miqp(build_model(cfg, with_binaries=True))
    assert bnb.max_complementarity() <= 1e-12
    _, agrees = compare_with_solver(cfg, bnb.profit)
    assert agrees
    # best complementary value over all four binary fixings
    qp = build_model(cfg, with_binaries=True)
    best = -np.inf
    for fix in itertools.product((0.0, 1.0), repeat=2):
        lo, hi = qp.lower.copy(), qp.upper.copy()
        lo[list(qp.binary_indices)] = hi[list(qp.binary_indices)] = fix
        r = solve_qp(qp.with_bounds(lo, hi))
        if r.status is Status.OPTIMAL:
            best = max(best, -r.objective)
    assert bnb.profit == pytest.approx(best, rel=1e-12)
    assert relaxed.profit - best > 0.4
    # auto notices the simultaneous flows and switches to branch-and-bound
    auto = solve_dispatch(cfg)
    assert auto.diagnostics.policy == "auto:bnb"
    assert auto.profit == pytest.approx(bnb.profit, rel=1e-12)
