"""Dense convex QP solver and branch-and-bound over binary columns.

Relaxations are solved by a Mehrotra predictor-corrector interior-point
method followed by an active-set polish: the constraints the interior
point identified as active are imposed as equalities and the resulting
KKT system is solved by regularized iterative refinement, which lands on
the optimum to machine precision.  When the interior point cannot
converge, a phase-one LP minimizing total constraint violation decides
between infeasibility (positive violation lower bound) and numerical
failure.

Two auxiliary LPs go to HiGHS dual simplex through scipy: the phase-one
problem and the tie-break over the optimal face, whose feasible set has
no interior.  Their answers are always re-checked with our own residuals.

Everything runs in dense numpy and HiGHS with no random draws, so results
are bitwise reproducible for fixed inputs.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog, nnls

from .errors import DimensionMismatch, NodeLimitExceeded, NonConvexError
from .model import QuadraticProgram

_INT_TOL = 1e-9


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverSettings:
    kkt_tol: float = 1e-8
    feas_tol: float = 1e-9
    max_iters: int = 200
    bnb_gap: float = 1e-9
    # Kept for interface stability; the algorithms draw no random numbers.
    deterministic_seed: int = 0
    max_nodes: int = 20000

    def __post_init__(self):
        for name in ("kkt_tol", "feas_tol", "bnb_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iters < 1 or self.max_nodes < 1:
            raise ValueError("max_iters and max_nodes must be >= 1")


@dataclass
class SolveDiagnostics:
    iterations: int = 0
    kkt_residual: float = float("inf")
    bnb_nodes: int = 0
    wall_time: float = 0.0
    # Phase-one lower bound on total constraint violation (0 when feasible).
    infeasibility: float = 0.0
    policy: str = "relaxed"


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    status: Status
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    iterations: int = 0
    kkt_residual: float = float("inf")
    infeasibility: float = 0.0


@dataclass
class DispatchSolution:
    """Optimal dispatch; station series have shape (K, T), ``p_wm`` (T,).

    ``objective`` is the minimization-form value, i.e. minus the profit.
    """

    p_di: np.ndarray
    p_ch: np.ndarray
    soc: np.ndarray
    p_wm: np.ndarray
    objective: float
    status: Status
    kkt_residual: float
    binaries: np.ndarray | None = None
    x: np.ndarray | None = None
    diagnostics: SolveDiagnostics = field(default_factory=SolveDiagnostics)

    @property
    def p_cs(self) -> np.ndarray:
        return self.p_di - self.p_ch

    @property
    def profit(self) -> float:
        return -self.objective

    @property
    def is_optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def max_complementarity(self) -> float:
        """Largest p_ch * p_di product, in MW^2."""
        if self.p_di.size == 0:
            return 0.0
        return float(np.max(self.p_ch * self.p_di))


# canonical form: min 1/2 x'Hx + c'x  s.t.  A x = b,  G x <= h


@dataclass
class _Canonical:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray


def _canonical(qp: QuadraticProgram) -> _Canonical:
    n = qp.n_vars
    rows, rhs = [], []
    M, lo, hi = qp.ineq_matrix, qp.ineq_lower, qp.ineq_upper
    up = np.isfinite(hi)
    dn = np.isfinite(lo)
    rows += [M[up], -M[dn]]
    rhs += [hi[up], -lo[dn]]
    eye = np.eye(n)
    ubf = np.isfinite(qp.upper)
    lbf = np.isfinite(qp.lower)
    rows += [eye[ubf], -eye[lbf]]
    rhs += [qp.upper[ubf], -qp.lower[lbf]]
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    return _Canonical(qp.hessian, qp.linear_cost, qp.eq_matrix, qp.eq_rhs, G.reshape(-1, n), h)


def _independent_rows(A: np.ndarray) -> np.ndarray:
    if A.shape[0] == 0:
        return np.arange(0)
    _, r, perm = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0:
        return np.arange(0)
    rank = int(np.sum(d > 1e-12 * d[0] * max(A.shape)))
    return np.sort(perm[:rank])


def _residual_parts(can: _Canonical, x, y, z):
    slack = can.h - can.G @ x
    stat = can.H @ x + can.c + can.A.T @ y + can.G.T @ z
    prim = max(_inf(can.A @ x - can.b), float(np.max(-slack, initial=0.0)))
    dual = float(np.max(-z, initial=0.0))
    comp = float(np.max(np.abs(z * slack), initial=0.0))
    return _inf(stat), prim, dual, comp


def _inf(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _kkt_value(can, x, y, z) -> float:
    return max(_residual_parts(can, x, y, z))


def _estimate_duals(can: _Canonical, x: np.ndarray):
    """Least-squares multipliers on the constraints active at x, with z >= 0.

    The free equality multipliers are projected out through a QR basis of
    the complement of range(A'), which leaves a plain NNLS problem for the
    inequality multipliers.
    """
    slack = can.h - can.G @ x
    active = np.flatnonzero(slack <= 1e-7 * (1.0 + np.abs(can.h)))
    me = can.A.shape[0]
    target = -(can.H @ x + can.c)
    z = np.zeros(can.G.shape[0])
    Ga = can.G[active].T
    if me:
        Q, R = sla.qr(can.A.T, mode="full")
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-12 * max(1.0, float(d.max(initial=0.0))) * max(can.A.shape)))
        N = Q[:, rank:]
    else:
        N = np.eye(x.size)
    if active.size:
        za, _ = nnls(N.T @ Ga, N.T @ target, maxiter=50 * max(1, active.size))
        z[active] = za
    y = np.zeros(me)
    if me:
        y, *_ = np.linalg.lstsq(can.A.T, target - can.G.T @ z, rcond=None)
    return y, z


def kkt_residual(qp: QuadraticProgram, point, duals=None) -> float:
    """Max of stationarity, primal, dual infeasibility and complementarity.

    ``point`` is a vector or anything with an ``x`` attribute.  Without
    explicit ``duals`` (a ``(y, z)`` pair in canonical row order) the
    multipliers are re-estimated by bound-constrained least squares on the
    constraints active at the point, so the value does not depend on any
    solver state.  All parts are absolute, in the problem's own units.
    """
    x = getattr(point, "x", point)
    if x is None:
        return float("inf")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != qp.n_vars:
        raise DimensionMismatch(f"point has {x.size} entries, QP has {qp.n_vars} variables")
    can = _canonical(qp)
    if duals is None:
        y, z = _estimate_duals(can, x)
    else:
        y, z = (np.asarray(d, dtype=float).ravel() for d in duals)
        if y.size != can.A.shape[0] or z.size != can.G.shape[0]:
            raise DimensionMismatch("dual vector sizes do not match the QP rows")
    return _kkt_value(can, x, y, z)


def max_violation(qp: QuadraticProgram, x) -> float:
    can = _canonical(qp)
    x = np.asarray(x, dtype=float)
    return max(_inf(can.A @ x - can.b), float(np.max(can.G @ x - can.h, initial=0.0)))


def _check_convex(H: np.ndarray):
    if H.size == 0:
        return
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, _inf(H))):
        raise NonConvexError("Hessian is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))[0]
    if lam < -max(1e-9, 1e-12 * _inf(H)):
        raise NonConvexError(f"Hessian has negative eigenvalue {lam:.3e}")


def _interior_point(can: _Canonical, max_iters: int, tol: float):
    """Mehrotra predictor-corrector on the canonical form.

    Returns (x, y, z, s, iterations, converged).
    """
    H, c, A, b, G, h = can.H, can.c, can.A, can.b, can.G, can.h
    n, me, mi = c.size, A.shape[0], G.shape[0]
    scale = max(1.0, _inf(H), _inf(c))
    rho = min(1e-10, 1e-11 * scale)  # proximal term, kept at or below 1e-10
    delta = 1e-11

    # variable-bound rows are +-unit vectors: their G'WG part is diagonal
    nnz = np.count_nonzero(G, axis=1)
    unit = (nnz == 1) & (np.abs(G).max(axis=1, initial=0.0) == 1.0)
    unit_col = np.argmax(np.abs(G[unit]), axis=1) if np.any(unit) else np.zeros(0, dtype=int)
    Gg = G[~unit]
    base = H + rho * np.eye(n)

    def factor(W):
        K = np.zeros((n + me, n + me))
        K[:n, :n] = base + (Gg.T * W[~unit]) @ Gg
        K[np.diag_indices(n)] += np.bincount(unit_col, weights=W[unit], minlength=n)
        K[:n, n:] = A.T
        K[n:, :n] = A
        K[n:, n:] = -delta * np.eye(me)
        return sla.lu_factor(K, check_finite=False)

    lu = factor(np.ones(mi))
    rhs = np.concatenate([-c + G.T @ h, b])
    x = sla.lu_solve(lu, rhs, check_finite=False)[:n]
    y = np.zeros(me)
    s = h - G @ x
    s = np.maximum(s, 1.0) if mi else s
    z = np.ones(mi)

    norm_b = 1.0 + _inf(b)
    norm_h = 1.0 + _inf(h)
    norm_c = 1.0 + _inf(c)
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        rd = H @ x + c + A.T @ y + G.T @ z
        rp = A @ x - b
        rg = G @ x + s - h
        mu = float(s @ z) / mi if mi else 0.0
        if (_inf(rp) <= tol * norm_b and _inf(rg) <= tol * norm_h
                and _inf(rd) <= tol * norm_c and mu <= tol * 1e-6 * norm_c * norm_h):
            converged = True
            break
        if not np.all(np.isfinite(x)) or _inf(x) > 1e14 or (mi and _inf(z) > 1e16):
            break
        # complementarity far below working precision: nothing left to gain
        if mi and mu <= 1e-20 * norm_c * norm_h:
            break
        W = z / s
        if not np.all(np.isfinite(W)) or float(np.max(W, initial=0.0)) > 1e13 * scale:
            break
        lu = factor(W)

        def direction(r_sz):
            q = (z * rg - r_sz) / s
            sol = sla.lu_solve(lu, np.concatenate([-rd - G.T @ q, -rp]), check_finite=False)
            dx, dy = sol[:n], sol[n:]
            Gdx = G @ dx
            return dx, dy, W * Gdx + q, -rg - Gdx

        def max_step(ds, dz):
            a = 1.0
            neg = ds < 0
            if np.any(neg):
                a = min(a, float(np.min(-s[neg] / ds[neg])))
            neg = dz < 0
            if np.any(neg):
                a = min(a, float(np.min(-z[neg] / dz[neg])))
            return a

        dx, dy, dz, ds = direction(s * z)
        a_aff = max_step(ds, dz)
        if mi:
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dz, ds = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * max_step(ds, dz))
        if mi and float((s + alpha * ds) @ (z + alpha * dz)) / mi > (1.0 - 0.01 * alpha) * mu:
            # the second-order term can stall complementarity; re-centre without it
            dx, dy, dz, ds = direction(s * z - max(sigma, 0.3) * mu)
            alpha = min(1.0, 0.99 * max_step(ds, dz))
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz)) and np.isfinite(alpha)):
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        if mi:
            # keep strictly interior
            s = np.maximum(s, 1e-300)
            z = np.maximum(z, 1e-300)
        if alpha < 1e-12:
            break
    return x, y, z, s, it, converged


def _polish(can: _Canonical, x0, y0, z0, s0):
    """Re-solve with the interior point's active set imposed as equalities."""
    H, c, A, b, G, h = can.H, can.c, can.A, can.b, can.G, can.h
    n, me = c.size, A.shape[0]
    best = None
    active = s0 < z0
    seen = set()
    for _ in range(6):
        key = active.tobytes()
        if key in seen:
            break
        seen.add(key)
        idx = np.flatnonzero(active)
        Ga = G[idx]
        nm = me + idx.size
        K = np.zeros((n + nm, n + nm))
        K[:n, :n] = H
        K[:n, n:n + me] = A.T
        K[:n, n + me:] = Ga.T
        K[n:n + me, :n] = A
        K[n + me:, :n] = Ga
        rhs = np.concatenate([-c, b, h[idx]])
        reg = np.concatenate([np.full(n, 1e-10), np.full(nm, -1e-10)])
        lu = sla.lu_factor(K + np.diag(reg), check_finite=False)
        w = np.concatenate([x0, y0, z0[idx]])
        for _ in range(60):
            r = rhs - K @ w
            if _inf(r) <= 1e-15 * (1.0 + _inf(rhs)):
                break
            w = w + sla.lu_solve(lu, r, check_finite=False)
        x = w[:n]
        y = w[n:n + me]
        z = np.zeros(G.shape[0])
        z[idx] = w[n + me:]
        neg = idx[z[idx] < 0]
        z = np.maximum(z, 0.0)
        val = _kkt_value(can, x, y, z)
        if best is None or val < best[3]:
            best = (x, y, z, val)
        viol = np.flatnonzero((G @ x - h > 1e-12 * (1 + np.abs(h))) & ~active)
        if neg.size == 0 and viol.size == 0:
            break
        active = active.copy()
        active[neg] = False
        active[viol] = True
    return best


def _solve_canonical(can: _Canonical, settings: SolverSettings) -> QPResult:
    n = can.c.size
    keep = _independent_rows(can.A)
    red = _Canonical(can.H, can.c, can.A[keep], can.b[keep], can.G, can.h)
    x, y_red, z, s, iters, converged = _interior_point(red, settings.max_iters, 1e-10)
    y = np.zeros(can.A.shape[0])
    y[keep] = y_red
    ipm_val = _kkt_value(can, x, y, z) if np.all(np.isfinite(x)) else float("inf")
    cand = (x, y, z, ipm_val)
    if np.all(np.isfinite(x)):
        pol = _polish(red, x, y_red, z, s)
        if pol is not None:
            px, py_red, pz, _ = pol
            py = np.zeros(can.A.shape[0])
            py[keep] = py_red
            pval = _kkt_value(can, px, py, pz)
            if pval < cand[3]:
                cand = (px, py, pz, pval)
    x, y, z, val = cand
    if val <= settings.kkt_tol:
        obj = float(0.5 * x @ can.H @ x + can.c @ x)
        return QPResult(x, obj, Status.OPTIMAL, y, z, iters, val)
    bound = _phase_one(can, settings)
    status = Status.INFEASIBLE if bound > settings.feas_tol * (1.0 + _inf(can.h) + _inf(can.b)) \
        else Status.NUMERICAL_FAILURE
    return QPResult(np.full(n, np.nan), float("nan"), status, None, None, iters, val, bound)


def _phase_one(can: _Canonical, settings: SolverSettings) -> float:
    """Lower bound on the least total violation of A x = b, G x <= h.

    min 1'(u + v + w)  s.t.  A x + u - v = b,  G x - w <= h,  u, v, w >= 0.
    The bound is the smaller of the LP value and its dual objective, so it
    never overstates the violation even when the LP is solved loosely.
    """
    n, me, mi = can.c.size, can.A.shape[0], can.G.shape[0]
    A1 = np.hstack([can.A, np.eye(me), -np.eye(me), np.zeros((me, mi))])
    G1 = np.hstack([can.G, np.zeros((mi, 2 * me)), -np.eye(mi)])
    c1 = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    lower = np.concatenate([np.full(n, -np.inf), np.zeros(2 * me + mi)])
    upper = np.full(c1.size, np.inf)
    res = _linprog(c1, A1, can.b, G1, can.h, lower, upper)
    if res.status != 0:
        return float("nan")
    dual_value = 0.0
    if me:
        dual_value += float(can.b @ res.eqlin.marginals)
    if mi:
        dual_value += float(can.h @ res.ineqlin.marginals)
    return max(0.0, min(float(res.fun), dual_value))


def _trivially_infeasible(qp: QuadraticProgram) -> bool:
    return bool(np.any(qp.lower > qp.upper) or np.any(qp.ineq_lower > qp.ineq_upper))


def solve_qp(qp: QuadraticProgram, settings: SolverSettings | None = None,
             tiebreak: bool = True) -> QPResult:
    """Solve the continuous QP (binary columns treated as continuous)."""
    settings = settings or SolverSettings()
    _check_convex(qp.hessian)
    can = _canonical(qp)
    if _trivially_infeasible(qp):
        bound = _phase_one(can, settings)
        return QPResult(np.full(qp.n_vars, np.nan), float("nan"), Status.INFEASIBLE,
                        infeasibility=bound)
    res = _solve_canonical(can, settings)
    if res.status is Status.OPTIMAL:
        res.x = np.clip(res.x, qp.lower, qp.upper)
        res.objective = qp.objective(res.x)
        if tiebreak and qp.tiebreak_cost is not None:
            res = _lexicographic(qp, can, res, settings)
    return res


_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _linprog(c, A_eq, b_eq, A_ub, b_ub, lower, upper):
    """HiGHS dual simplex; returns the scipy result (vertex solutions)."""
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
              for lo, hi in zip(lower, upper)]
    return linprog(c, A_ub=A_ub if A_ub.shape[0] else None, b_ub=b_ub if A_ub.shape[0] else None,
                   A_eq=A_eq if A_eq.shape[0] else None, b_eq=b_eq if A_eq.shape[0] else None,
                   bounds=bounds, method="highs-ds", options=_HIGHS_OPTIONS)


def _row_form(qp: QuadraticProgram):
    M, lo, hi = qp.ineq_matrix, qp.ineq_lower, qp.ineq_upper
    up, dn = np.isfinite(hi), np.isfinite(lo)
    return np.vstack([M[up], -M[dn]]).reshape(-1, qp.n_vars), np.concatenate([hi[up], -lo[dn]])


def _lexicographic(qp, can, res: QPResult, settings) -> QPResult:
    """Minimize the tie-break cost over the optimal face of ``res``.

    For a convex QP the optimal set is {x feasible : Hx = Hx*, c'x = c'x*},
    so the secondary problem is an LP.  The face usually has no interior,
    which is where simplex does better than an interior point; the answer
    is accepted only if it keeps the primary value and passes our own KKT
    check.
    """
    x0 = res.x
    w, U = np.linalg.eigh(can.H)
    keep = w > 1e-10 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    R = U[:, keep].T
    A2 = np.vstack([qp.eq_matrix, R, qp.linear_cost[None, :]])
    b2 = np.concatenate([qp.eq_rhs, R @ x0, [qp.linear_cost @ x0]])
    G, h = _row_form(qp)
    sec = _linprog(np.asarray(qp.tiebreak_cost, float), A2, b2, G, h, qp.lower, qp.upper)
    if sec.status != 0:
        return res
    x = np.clip(sec.x, qp.lower, qp.upper)
    obj = qp.objective(x)
    if abs(obj - res.objective) > 1e-12 * max(1.0, abs(res.objective)):
        return res
    if max_violation(qp, x) > settings.feas_tol:
        return res
    y, z = _estimate_duals(can, x)
    val = _kkt_value(can, x, y, z)
    if val > settings.kkt_tol:
        return res
    return QPResult(x, obj, Status.OPTIMAL, y, z, res.iterations + int(sec.nit), val)


def _to_dispatch(qp: QuadraticProgram, res: QPResult, diag: SolveDiagnostics,
                 with_binaries: bool) -> DispatchSolution:
    K, T = qp.n_stations, qp.horizon
    x = res.x
    if qp.var_index_map and K and T:
        p_di = x[qp.columns_of("P_di")]
        p_ch = x[qp.columns_of("P_ch")]
        soc = x[qp.columns_of("E")]
        p_wm = x[qp.columns_of("P_WM")]
        binaries = x[qp.columns_of("b")] if with_binaries else None
        if binaries is not None and res.status is Status.OPTIMAL:
            binaries = np.round(binaries)
    else:
        p_di = p_ch = soc = np.zeros((K, T))
        p_wm = np.zeros(T)
        binaries = None
    diag.kkt_residual = res.kkt_residual
    diag.infeasibility = res.infeasibility
    return DispatchSolution(p_di=p_di, p_ch=p_ch, soc=soc, p_wm=p_wm, objective=res.objective,
                            status=res.status, kkt_residual=res.kkt_residual, binaries=binaries,
                            x=x, diagnostics=diag)


def solve_relaxed(qp: QuadraticProgram, settings: SolverSettings | None = None) -> DispatchSolution:
    """Solve ``qp`` with any binary columns relaxed to [0, 1].

    Raises :class:`NonConvexError` when the Hessian is not PSD; infeasible
    and non-converged problems are reported through ``status``.
    """
    t0 = time.perf_counter()
    res = solve_qp(qp, settings)
    diag = SolveDiagnostics(iterations=res.iterations, policy="relaxed")
    diag.wall_time = time.perf_counter() - t0
    return _to_dispatch(qp, res, diag, with_binaries=bool(qp.binary_indices))


def _snap_binaries(qp: QuadraticProgram, x: np.ndarray, bins: np.ndarray, settings) -> np.ndarray | None:
    """Round fractional binaries one at a time, keeping the point feasible."""
    can = _canonical(qp)
    x = x.copy()
    tol = 10 * settings.feas_tol

    def ok(v):
        return _inf(can.A @ v - can.b) <= tol and float(np.max(can.G @ v - can.h, initial=0.0)) <= tol

    for j in bins:
        if abs(x[j] - round(x[j])) <= _INT_TOL:
            x[j] = round(x[j])
            continue
        near = float(round(x[j]))
        for cand in (near, 1.0 - near):
            if not qp.lower[j] <= cand <= qp.upper[j]:
                continue
            old, x[j] = x[j], cand
            if ok(x):
                break
            x[j] = old
        else:
            return None
    return x if ok(x) else None


def solve_miqp(qp: QuadraticProgram, settings: SolverSettings | None = None) -> DispatchSolution:
    """Best-first branch-and-bound over ``qp.binary_indices``.

    Branches on the most fractional binary, ties going to the lowest column
    (binary columns are laid out in (t, k) lexicographic order).  A node is
    fathomed when its relaxation can be rounded to an integral point without
    losing feasibility; the incumbent is finally re-solved with all binaries
    fixed so the reported point carries its own KKT certificate.
    """
    settings = settings or SolverSettings()
    if not qp.binary_indices:
        raise ValueError("solve_miqp needs at least one binary column")
    t0 = time.perf_counter()
    _check_convex(qp.hessian)
    bins = np.asarray(qp.binary_indices, dtype=int)
    lb0 = qp.lower.copy()
    ub0 = qp.upper.copy()
    lb0[bins] = np.maximum(lb0[bins], 0.0)
    ub0[bins] = np.minimum(ub0[bins], 1.0)

    incumbent = None
    inc_obj = np.inf
    nodes = iters = 0
    counter = 0
    failed = False
    # equal bounds: deeper node first, then creation order
    heap = [(-np.inf, 0, counter, lb0, ub0)]
    while heap:
        bound, neg_depth, _, lb, ub = heapq.heappop(heap)
        gap = settings.bnb_gap * max(1.0, abs(inc_obj)) if np.isfinite(inc_obj) else 0.0
        if bound >= inc_obj - gap:
            continue
        nodes += 1
        if nodes > settings.max_nodes:
            raise NodeLimitExceeded(f"more than {settings.max_nodes} nodes explored")
        node_qp = qp.with_bounds(lb, ub)
        res = solve_qp(node_qp, settings)
        iters += res.iterations
        if res.status is Status.INFEASIBLE:
            continue
        if res.status is not Status.OPTIMAL:
            failed = True
            continue
        if res.objective >= inc_obj - gap:
            continue
        xb = res.x[bins]
        frac = np.abs(xb - np.round(xb))
        snapped = _snap_binaries(node_qp, res.x, bins, settings)
        if snapped is not None:
            val = qp.objective(snapped)
            if val < inc_obj:
                incumbent, inc_obj = snapped, val
            if val <= res.objective + settings.bnb_gap * max(1.0, abs(val)):
                continue
        pick = int(np.argmin(np.where(frac > _INT_TOL, np.abs(xb - 0.5), np.inf)))
        if frac[pick] <= _INT_TOL:
            continue
        j = bins[pick]
        for lo_val, hi_val in ((0.0, 0.0), (1.0, 1.0)):
            clb, cub = lb.copy(), ub.copy()
            clb[j], cub[j] = lo_val, hi_val
            counter += 1
            heapq.heappush(heap, (res.objective, neg_depth - 1, counter, clb, cub))

    diag = SolveDiagnostics(iterations=iters, bnb_nodes=nodes, policy="bnb")
    if incumbent is None:
        status = Status.NUMERICAL_FAILURE if failed else Status.INFEASIBLE
        res = QPResult(np.full(qp.n_vars, np.nan), float("nan"), status)
        if status is Status.INFEASIBLE:
            res.infeasibility = _phase_one(_canonical(qp.with_bounds(lb0, ub0)), settings)
        diag.wall_time = time.perf_counter() - t0
        return _to_dispatch(qp, res, diag, with_binaries=True)

    fixed_lb, fixed_ub = lb0.copy(), ub0.copy()
    fixed_lb[bins] = fixed_ub[bins] = np.round(incumbent[bins])
    leaf = qp.with_bounds(fixed_lb, fixed_ub)
    final = solve_qp(leaf, settings, tiebreak=False)
    iters += final.iterations
    if final.status is not Status.OPTIMAL:
        can = _canonical(leaf)
        y, z = _estimate_duals(can, incumbent)
        final = QPResult(incumbent, inc_obj, Status.OPTIMAL, y, z, 0, _kkt_value(can, incumbent, y, z))
    diag.iterations = iters
    diag.wall_time = time.perf_counter() - t0
    return _to_dispatch(qp, final, diag, with_binaries=True)
