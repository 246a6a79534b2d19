"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 infeasible,
3 numerical failure, 4 solver/oracle disagreement.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AggBidError, TooLarge
from .io import RunManifest, emit_report, parse_config
from .model import UtilityMode, build_model, convexity_spectrum
from .oracle import GridSpec, compare_with_solver
from .scenario import SweepConfig, run_scenario, solve_dispatch, sweep_price_scale
from .solver import SolverSettings, Status

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_ORACLE = 0, 1, 2, 3, 4

_POLICIES = {"relaxed": "relaxed", "bnb": "bnb", "auto": "auto"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, mode_choices=True):
    p.add_argument("--config", default="paper_base.cfg",
                   help="scenario config (bundled names such as paper_base.cfg also work)")
    p.add_argument("--prices", help="price CSV overriding the one named in the config")
    p.add_argument("--policy", choices=sorted(_POLICIES), help="binary policy override")
    if mode_choices:
        p.add_argument("--mode", choices=[m.value for m in UtilityMode],
                       help="utility mode override (default: per config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aggbid", description="EV charging aggregator bidding and pricing")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve one scenario and write dispatch.csv / report.json")
    _common(run)
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--plots", action="store_true", help="also render dispatch.png")

    sweep = sub.add_parser("sweep", help="scale wholesale prices by K and re-solve")
    _common(sweep, mode_choices=False)
    sweep.add_argument("--out", default="out")
    sweep.add_argument("--k-min", type=float, default=1.0)
    sweep.add_argument("--k-max", type=float, default=30.0)
    sweep.add_argument("--k-step", type=float, default=1.0)
    sweep.add_argument("--modes", default="hourly,terminal",
                       help="comma-separated utility modes")
    sweep.add_argument("--plots", action="store_true", help="also render sweep.png")

    oc = sub.add_parser("oracle-check", help="compare the solver with the brute-force grid")
    _common(oc)
    oc.add_argument("--grid-resolution", type=int, default=1001)

    ins = sub.add_parser("inspect-model", help="print QP dimensions and Hessian spectrum")
    _common(ins)
    return parser


def _load(args):
    config = parse_config(args.config, prices=args.prices)
    if args.policy:
        config = config.with_policy(_POLICIES[args.policy])
    return config


def _status_code(status: Status) -> int:
    if status is Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    if status is Status.NUMERICAL_FAILURE:
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _load(args)
    config = config.with_mode(args.mode)
    settings = SolverSettings()
    result = run_scenario(config, None, settings)
    sol = result.solution
    if not sol.is_optimal:
        print(f"solve ended {sol.status.value} "
              f"(violation lower bound {sol.diagnostics.infeasibility:.3g})", file=sys.stderr)
        return _status_code(sol.status)
    manifest = RunManifest.for_run(config, args.mode, settings)
    paths = emit_report(result, manifest, args.out, config=config)
    if args.plots:
        from .plotting import render_run_figures
        paths.append(render_run_figures(result, config, args.out))
    p = result.profit
    print(f"total {p.total_profit:.6f} $  wholesale {p.wholesale_profit:.6f} $  "
          f"ev {p.ev_trading_profit:.6f} $  policy {sol.diagnostics.policy}")
    for path in paths:
        print(path)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load(args)
    try:
        modes = [UtilityMode(m.strip()) for m in args.modes.split(",") if m.strip()]
        sweep = SweepConfig.from_range(args.k_min, args.k_max, args.k_step)
    except ValueError as exc:
        print(f"aggbid sweep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not modes:
        print("aggbid sweep: no modes given", file=sys.stderr)
        return EXIT_USAGE
    settings = SolverSettings()
    report = sweep_price_scale(config, sweep, modes, settings)
    manifest = RunManifest.for_run(config, modes, settings)
    paths = emit_report(report, manifest, args.out)
    if args.plots:
        from .plotting import render_sweep_figures
        paths.append(render_sweep_figures(report, args.out))
    for path in paths:
        print(path)
    statuses = {r.status for r in report.records}
    if Status.NUMERICAL_FAILURE in statuses:
        return EXIT_NUMERICAL
    if Status.INFEASIBLE in statuses:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_oracle(args) -> int:
    config = _load(args)
    modes = [UtilityMode(args.mode)] if args.mode else sorted(
        {u.mode for u in config.utilities}, key=lambda m: m.value)
    grid = GridSpec(resolution=args.grid_resolution)
    code = EXIT_OK
    for mode in modes:
        sol = solve_dispatch(config, mode)
        if not sol.is_optimal:
            print(f"{mode.value}: solver {sol.status.value}", file=sys.stderr)
            return _status_code(sol.status)
        try:
            res, ok = compare_with_solver(config, sol.profit, mode, grid)
        except TooLarge as exc:
            print(f"aggbid oracle-check: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"{mode.value}: solver {sol.profit:.9f} $  oracle {res.objective:.9f} $  "
              f"bound {res.bound:.3g}  {'agree' if ok else 'MISMATCH'}")
        if not ok:
            code = EXIT_ORACLE
    return code


def _cmd_inspect(args) -> int:
    config = _load(args)
    qp = build_model(config, args.mode, with_binaries=config.binary_policy.value == "bnb")
    eig = np.linalg.eigvalsh(qp.hessian)
    roles = {}
    for role, _, _ in qp.var_index_map:
        roles[role] = roles.get(role, 0) + 1
    info = {
        "n_vars": qp.n_vars,
        "columns_by_role": roles,
        "eq_rows": int(qp.eq_matrix.shape[0]),
        "ineq_rows": int(qp.ineq_matrix.shape[0]),
        "finite_var_bounds": int(np.isfinite(qp.lower).sum() + np.isfinite(qp.upper).sum()),
        "binaries": len(qp.binary_indices),
        "hessian_min_eig": float(eig[0]),
        "hessian_max_eig": float(eig[-1]),
        "hessian_rank": int(np.sum(eig > 1e-9 * max(1.0, abs(eig[-1])))),
        "ones_matrix_spectrum_head": list(convexity_spectrum(config.T)[:3]),
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "oracle-check": _cmd_oracle,
             "inspect-model": _cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (AggBidError, FileNotFoundError) as exc:
        print(f"aggbid {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
