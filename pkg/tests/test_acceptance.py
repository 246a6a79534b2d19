"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""
import time
import warnings

import numpy as np
import pytest

from aggbid.cli import main
from aggbid.io import parse_config
from aggbid.model import build_model, constraint_residuals, convexity_spectrum
from aggbid.oracle import GridSpec, compare_with_solver
from aggbid.pricing import closed_form_ev_profit, stationarity_price
from aggbid.scenario import affine_r2, run_scenario, second_differences, solve_dispatch, sweep_price_scale
from aggbid.solver import solve_miqp, solve_relaxed

from conftest import random_config, record_acceptance

HORIZONS = (1, 2, 3, 24)
MODES = ("hourly", "terminal")
POLICIES = ("relaxed", "bnb", "auto")
N_CONFIGS = 50


@pytest.fixture(scope="module")
def matrix():
    """Every (config, T, mode, policy) solve of the test matrix, with timing."""
    runs = []
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # negative lambda is legitimate here
        for T in HORIZONS:
            rng = np.random.default_rng(1000 + T)
            for i in range(N_CONFIGS):
                base = random_config(rng, T, n_stations=1 + i % 2, lossless_share=0.3)
                for mode in MODES:
                    for policy in POLICIES:
                        cfg = base.with_policy(policy).with_mode(mode)
                        runs.append((cfg, run_scenario(cfg)))
    return runs, time.perf_counter() - t0


def test_ac1_stationarity_witness(matrix):
    runs, elapsed = matrix
    worst = 0.0
    n_opt = 0
    for cfg, (sol, _, _) in runs:
        if not sol.is_optimal:
            continue
        n_opt += 1
        p_cs = sol.p_cs
        lam = np.vstack([stationarity_price(p_cs[k], u) for k, u in enumerate(cfg.utilities)])
        substituted = float(np.sum(lam * p_cs))
        closed = closed_form_ev_profit(p_cs, cfg.utilities)
        scale = max(abs(closed), float(np.sum(np.abs(lam * p_cs))))
        rel = abs(substituted - closed) / scale if scale > 0 else abs(substituted - closed)
        worst = max(worst, rel)
    ok = n_opt == len(runs) and worst <= 1e-9 and elapsed < 60.0
    record_acceptance("AC1 stationarity witness", ok,
                      f"{n_opt}/{len(runs)} optimal, worst rel {worst:.2e}, {elapsed:.1f}s")
    assert n_opt == len(runs)
    assert worst <= 1e-9
    assert elapsed < 60.0


def test_ac2_flat_terminal_price(matrix):
    runs, _ = matrix
    spreads = [float(np.max(sched.spread())) for cfg, (sol, sched, _) in runs
               if sol.is_optimal and cfg.utilities[0].mode.value == "terminal"]
    worst = max(spreads)
    ok = worst <= 1e-6
    record_acceptance("AC2 flat terminal price", ok, f"{len(spreads)} solves, max spread {worst:.2e} $/MWh")
    assert ok


def _oracle_configs():
    cases = [("derived T=1", parse_config("derived_t1.cfg"), "hourly", -59.616),
             ("arbitrage T=2", parse_config("arbitrage_t2.cfg"), "hourly", 25.8)]
    rng = np.random.default_rng(424242)
    for i in range(22):
        T = 1 + i % 2
        K = 2 if (T == 1 and i % 4 == 0) else 1
        cases.append((f"random {i}", random_config(rng, T, K, lossless_share=0.3), MODES[(i // 2) % 2], None))
    return cases


def test_ac3_oracle_equivalence():
    t0 = time.perf_counter()
    failures = []
    for name, cfg, mode, frozen in _oracle_configs():
        sol = solve_dispatch(cfg, mode)
        if not sol.is_optimal:
            failures.append(f"{name}: {sol.status.value}")
            continue
        res, agrees = compare_with_solver(cfg, sol.profit, mode, GridSpec(resolution=1001))
        if not agrees:
            failures.append(f"{name}: solver {sol.profit} oracle {res.objective} bound {res.bound}")
        if frozen is not None and abs(res.objective - frozen) > res.bound:
            failures.append(f"{name}: oracle {res.objective} does not confirm {frozen}")
        if frozen is not None and abs(sol.profit - frozen) > 1e-9 * abs(frozen):
            failures.append(f"{name}: solver {sol.profit} != {frozen}")
    elapsed = time.perf_counter() - t0
    n = len(_oracle_configs())
    ok = not failures and n >= 20 and elapsed < 300.0
    record_acceptance("AC3 oracle equivalence", ok, f"{n} configs, {len(failures)} mismatches, {elapsed:.1f}s")
    assert not failures, failures
    assert elapsed < 300.0


def test_ac4_convexity_spectrum():
    exact = all(convexity_spectrum(T) == (float(T),) + (0.0,) * (T - 1) for T in range(1, 65))
    min_eig = np.inf
    for T in range(1, 65):
        cfg = random_config(np.random.default_rng(T), T, mode="terminal")
        qp = build_model(cfg, with_binaries=False)
        di = qp.columns_of("P_di")[0]
        ch = qp.columns_of("P_ch")[0]
        block = qp.hessian[np.ix_(np.r_[di, ch], np.r_[di, ch])]
        min_eig = min(min_eig, float(np.linalg.eigvalsh(block)[0]))
    ok = exact and min_eig >= -1e-9
    record_acceptance("AC4 convexity spectrum", ok,
                      f"spectrum exact for T=1..64: {exact}, min terminal eigenvalue {min_eig:.2e}")
    assert exact
    assert min_eig >= -1e-9


def test_ac5_binary_elimination():
    rng = np.random.default_rng(55)
    worst_comp = worst_rel = 0.0
    offenders = []
    for i in range(N_CONFIGS):
        T = HORIZONS[i % 4]
        mode = MODES[i % 2]
        cfg = random_config(rng, T, n_stations=1 + (i // 4) % 2, eta_range=(0.8, 0.99), mode=mode)
        relaxed = solve_relaxed(build_model(cfg, with_binaries=False))
        bnb = solve_miqp(build_model(cfg, with_binaries=True))
        assert relaxed.is_optimal and bnb.is_optimal
        comp = relaxed.max_complementarity()
        rel = abs(relaxed.objective - bnb.objective) / max(abs(bnb.objective), 1e-300)
        if comp > 1e-6 or rel > 1e-9:
            offenders.append(f"#{i} {mode} T={T}")
        worst_comp = max(worst_comp, comp)
        worst_rel = max(worst_rel, rel)
    ok = worst_comp <= 1e-6 and worst_rel <= 1e-9
    record_acceptance("AC5 binary elimination", ok,
                      f"max p_ch*p_di {worst_comp:.2e} MW^2, max rel gap {worst_rel:.2e}, "
                      f"{N_CONFIGS - len(offenders)}/{N_CONFIGS} configs pass"
                      + (f", failing: {', '.join(offenders)}" if offenders else ""))
    assert worst_comp <= 1e-6, offenders
    assert worst_rel <= 1e-9, offenders


def test_ac6_sensitivity(paper_config):
    t0 = time.perf_counter()
    report = sweep_price_scale(paper_config)
    elapsed = time.perf_counter() - t0
    details, ok = [], elapsed < 30.0
    for mode in MODES:
        total = report.series(mode)
        d2 = float(np.min(second_differences(total)))
        tol = -1e-6 * float(np.max(np.abs(total)))
        ok &= bool(np.all(np.isfinite(total))) and d2 >= tol
        details.append(f"{mode} min d2 {d2:.3g} (>= {tol:.3g})")
    ks = [r.k for r in report.for_mode("terminal")]
    r2 = affine_r2(ks, report.series("terminal"))
    ok &= r2 >= 0.999
    record_acceptance("AC6 sensitivity sweep", ok, f"{', '.join(details)}, terminal R^2 {r2:.6f}, {elapsed:.1f}s")
    assert ok


def test_ac7_feasibility(matrix, paper_config):
    runs, _ = matrix
    worst = 0.0
    binding = 0
    floor_dev = 0.0
    extra = [(paper_config.with_mode(m), run_scenario(paper_config, m)) for m in MODES]
    for cfg, (sol, _, _) in list(runs) + extra:
        if not sol.is_optimal:
            continue
        worst = max(worst, max(constraint_residuals(cfg, sol).values()))
        for k, st in enumerate(cfg.stations):
            gap = sol.soc[k, -1] - st.terminal_floor
            if gap <= 1e-6:
                binding += 1
                floor_dev = max(floor_dev, abs(gap))
    # the base scenario's terminal mode is floor-binding at exactly 0.5 * 0.6 MWh
    paper_terminal = float(extra[1][1].solution.soc[0, -1])
    paper_exact = abs(paper_terminal - 0.5 * paper_config.stations[0].e_max) <= 1e-9
    ok = worst <= 1e-9 and floor_dev <= 1e-9 and paper_exact and binding > 0
    record_acceptance("AC7 feasibility", ok,
                      f"max residual {worst:.2e}, {binding} binding floors, max floor deviation "
                      f"{floor_dev:.2e}, base terminal SOC {paper_terminal!r}")
    assert worst <= 1e-9
    assert floor_dev <= 1e-9
    assert paper_exact


def test_ac8_determinism(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["sweep", "--out", str(d), "--plots"]) for d in dirs]
    names = sorted(p.name for p in dirs[0].iterdir())
    same = all((dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    same &= names == sorted(p.name for p in dirs[1].iterdir())
    ok = codes == [0, 0] and same and {"sweep.csv", "report.json"} <= set(names)
    record_acceptance("AC8 determinism", ok, f"files {names}, byte-identical: {same}")
    assert ok
