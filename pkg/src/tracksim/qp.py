"""Dense convex QP solver: primal active-set with KKT subproblems.

Solves   min 1/2 x^T P x + q^T x   s.t.  G x <= h,  lower <= x <= upper.

Bounds are folded into inequality rows internally; the combined row order is
[lower bounds, upper bounds, G rows], which keeps bound-row indices stable
when callers vary the number of G rows between warm-started solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


class NonConvexError(ValueError):
    """P is not positive semidefinite (Cholesky failed after regularization)."""


@dataclass(frozen=True)
class QuadraticProgram:
    P: np.ndarray                  # (n, n) symmetric PSD
    q: np.ndarray                  # (n,)
    G: np.ndarray                  # (m, n); m may be 0
    h: np.ndarray                  # (m,)
    lower: np.ndarray              # (n,), -inf allowed
    upper: np.ndarray              # (n,), +inf allowed

    def __post_init__(self):
        P = np.asarray(self.P, float)
        q = np.asarray(self.q, float)
        n = q.shape[0]
        G = np.asarray(self.G, float).reshape(-1, n)
        h = np.asarray(self.h, float)
        lo = np.asarray(self.lower, float)
        up = np.asarray(self.upper, float)
        if P.shape != (n, n):
            raise ValueError(f"P shape {P.shape} inconsistent with q ({n},)")
        if not np.allclose(P, P.T, atol=1e-9):
            raise ValueError("P must be symmetric")
        if h.shape != (G.shape[0],):
            raise ValueError("G and h row counts differ")
        if lo.shape != (n,) or up.shape != (n,) or np.any(lo > up):
            raise ValueError("bad bounds")
        for name, v in (("P", P), ("q", q), ("G", G), ("h", h),
                        ("lower", lo), ("upper", up)):
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    objective: float                      # 1/2 x^T P x + q^T x
    duals: np.ndarray                     # multipliers for G rows
    duals_lower: np.ndarray
    duals_upper: np.ndarray
    active_set: list[int] = field(default_factory=list)  # combined-row indices
    iterations: int = 0
    max_violation: float = 0.0
    infeasible_rows: list[int] = field(default_factory=list)


def _chol_regularize(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (P + ridge if needed, its lower Cholesky factor)."""
    for ridge in (0.0, 1e-9, 1e-8):
        try:
            Pr = P + ridge * np.eye(P.shape[0]) if ridge else P
            return Pr, np.linalg.cholesky(Pr)
        except np.linalg.LinAlgError:
            continue
    raise NonConvexError("P is not PSD (Cholesky failed after regularization)")


def _chol_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    y = solve_triangular(L, rhs, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def _combined_rows(prob: QuadraticProgram):
    n = prob.n
    eye = np.eye(n)
    lo_fin = np.isfinite(prob.lower)
    up_fin = np.isfinite(prob.upper)
    n_lo = int(np.count_nonzero(lo_fin))
    lo_idx = {int(i): r for r, i in enumerate(np.nonzero(lo_fin)[0])}
    up_idx = {int(i): n_lo + r for r, i in enumerate(np.nonzero(up_fin)[0])}
    g_off = n_lo + int(np.count_nonzero(up_fin))
    A = np.vstack([-eye[lo_fin], eye[up_fin], prob.G])
    b = np.concatenate([-prob.lower[lo_fin], prob.upper[up_fin], prob.h])
    return A, b, lo_idx, up_idx, g_off


def _active_set_core(P, L, q, A, b, x0, W0, tol, max_iter):
    """Primal active-set loop from a feasible x0. Returns (x, lam_by_row, W, iters, converged).

    Each KKT subproblem is solved through the Schur complement on the working
    set, reusing the Cholesky factor L of P: the k x k system in the
    multipliers is far cheaper than refactoring the full (n + k) KKT matrix.
    """
    n = x0.shape[0]
    x = x0.copy()
    Pinv = _chol_solve(L, np.eye(n))
    W: list[int] = []
    for i in W0:
        if 0 <= i < A.shape[0] and abs(A[i] @ x - b[i]) <= 1e-7 \
                and i not in W and len(W) < n:
            W.append(i)
    lam_w = np.zeros(0)
    for it in range(1, max_iter + 1):
        g = P @ x + q
        pg = -(Pinv @ g)
        if W:
            Aw = A[W]
            # residual-correcting rhs keeps iterates on the active rows
            r = b[W] - Aw @ x
            PiAwT = Pinv @ Aw.T
            APAT = Aw @ PiAwT
            rhs = Aw @ pg - r
            try:
                lam_w = np.linalg.solve(APAT, rhs)
            except np.linalg.LinAlgError:
                lam_w = np.linalg.lstsq(APAT, rhs, rcond=None)[0]
            p = pg - PiAwT @ lam_w
        else:
            p = pg
            lam_w = np.zeros(0)
        if np.max(np.abs(p), initial=0.0) <= tol * max(1.0, np.linalg.norm(x)):
            if len(W) == 0 or np.min(lam_w) >= -tol:
                return x, dict(zip(W, lam_w)), W, it, True
            W.pop(int(np.argmin(lam_w)))
            continue
        # step length to the nearest blocking constraint
        denom = A @ p
        slack = b - A @ x
        cand = denom > 1e-12
        cand[W] = False
        alpha, blocking = 1.0, -1
        if np.any(cand):
            idx = np.nonzero(cand)[0]
            ratios = slack[idx] / denom[idx]
            j = int(np.argmin(ratios))
            if ratios[j] < alpha:
                alpha, blocking = max(float(ratios[j]), 0.0), int(idx[j])
        x = x + alpha * p
        if blocking >= 0 and alpha < 1.0:
            if len(W) >= n:
                # keep the working set independent; drop the smallest multiplier
                W.pop(int(np.argmin(lam_w)) if len(lam_w) else 0)
            W.append(blocking)
    return x, dict(zip(W, lam_w)), W, max_iter, False


def _repair(A, b, x0, feas_tol):
    """Cheap feasibility restoration: minimum-norm shift of x0 onto the
    violated rows (with a small interior margin).  Returns None when the
    shifted point still violates anything; the caller then falls back to the
    phase-1 LP."""
    x = x0
    # a shift onto the violated rows can push other rows out; accumulate the
    # violated set over a few passes before giving up
    bad = np.zeros(A.shape[0], dtype=bool)
    for _ in range(4):
        viol = A @ x - b
        if float(np.max(viol, initial=0.0)) <= feas_tol:
            return x
        bad |= viol > feas_tol
        if np.count_nonzero(bad) > x0.shape[0]:
            return None
        Av = A[bad]
        rhs = Av @ x - b[bad] + 1e-7
        try:
            x = x - Av.T @ np.linalg.solve(Av @ Av.T, rhs)
        except np.linalg.LinAlgError:
            return None
    if float(np.max(A @ x - b, initial=0.0)) > feas_tol:
        return None
    return x


def _phase1(A, b, x0):
    """Minimize the max constraint violation s over (x, s) with A x - s <= b."""
    from scipy.optimize import linprog
    n = x0.shape[0]
    c = np.zeros(n + 1)
    c[n] = 1.0
    A_ub = np.hstack([A, -np.ones((A.shape[0], 1))])
    b_ub = b
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:  # pragma: no cover - HiGHS handles these LPs
        viol = float(np.max(A @ x0 - b, initial=0.0))
        return x0, viol
    return res.x[:n], float(res.x[n])


def solve_qp(prob: QuadraticProgram, tol: float = 1e-9, max_iter: int = 500,
             x0: np.ndarray | None = None,
             warm_start: list[int] | None = None) -> QpSolution:
    """Solve the QP; feasible start found via phase-1 when needed.

    `x0` seeds the iterate (clipped into bounds); `warm_start` is a list of
    combined-row indices from a previous solution's `active_set`.
    """
    P, L = _chol_regularize(prob.P)
    n = prob.n
    A, b, lo_idx, up_idx, g_off = _combined_rows(prob)

    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.asarray(x0, float).copy()
    x = np.clip(x, prob.lower, prob.upper)

    feas_tol = 1e-8 * max(1.0, float(np.max(np.abs(b), initial=0.0)))
    total_iters = 0
    if A.shape[0] and float(np.max(A @ x - b, initial=0.0)) > feas_tol:
        repaired = _repair(A, b, x, feas_tol)
        if repaired is not None:
            x, s = repaired, 0.0
        else:
            x, s = _phase1(A, b, x)
        if s > max(feas_tol, 1e-6):
            viol = A @ x - b
            bad = [int(i) for i in np.nonzero(viol > s - 1e-6)[0]]
            return QpSolution(
                x=x, status=QpStatus.INFEASIBLE,
                objective=float(0.5 * x @ prob.P @ x + prob.q @ x),
                duals=np.zeros(prob.G.shape[0]),
                duals_lower=np.zeros(n), duals_upper=np.zeros(n),
                iterations=total_iters, max_violation=float(np.max(viol, initial=0.0)),
                infeasible_rows=bad)
        x = np.clip(x, prob.lower, prob.upper)

    W0 = list(warm_start) if warm_start else \
        [int(i) for i in np.nonzero(np.abs(A @ x - b) <= 1e-9)[0]] if A.shape[0] else []
    x, lam_by_row, W, iters, converged = _active_set_core(
        P, L, prob.q, A, b, x, W0, tol, max_iter)
    total_iters += iters

    duals = np.zeros(prob.G.shape[0])
    d_lo = np.zeros(n)
    d_up = np.zeros(n)
    for row, lam in lam_by_row.items():
        lam = max(float(lam), 0.0) if converged else float(lam)
        if row >= g_off:
            duals[row - g_off] = lam
        else:
            for i, r in lo_idx.items():
                if r == row:
                    d_lo[i] = lam
            for i, r in up_idx.items():
                if r == row:
                    d_up[i] = lam
    viol = float(np.max(A @ x - b, initial=0.0)) if A.shape[0] else 0.0
    return QpSolution(
        x=x, status=QpStatus.OPTIMAL if converged else QpStatus.MAX_ITER,
        objective=float(0.5 * x @ prob.P @ x + prob.q @ x),
        duals=duals, duals_lower=d_lo, duals_upper=d_up,
        active_set=list(W), iterations=total_iters, max_violation=viol)


def kkt_residual(prob: QuadraticProgram, sol: QpSolution) -> float:
    """Max of stationarity, primal violation, dual negativity, complementarity."""
    x = sol.x
    stat = prob.P @ x + prob.q
    if prob.G.shape[0]:
        stat = stat + prob.G.T @ sol.duals
    stat = stat - sol.duals_lower + sol.duals_upper
    stationarity = float(np.max(np.abs(stat)))

    primal = 0.0
    comp = 0.0
    if prob.G.shape[0]:
        slack = prob.G @ x - prob.h
        primal = max(primal, float(np.max(slack, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(sol.duals * slack), initial=0.0)))
    finite_lo = np.isfinite(prob.lower)
    finite_up = np.isfinite(prob.upper)
    if np.any(finite_lo):
        s = (prob.lower - x)[finite_lo]
        primal = max(primal, float(np.max(s, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(sol.duals_lower[finite_lo] * s), initial=0.0)))
    if np.any(finite_up):
        s = (x - prob.upper)[finite_up]
        primal = max(primal, float(np.max(s, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(sol.duals_upper[finite_up] * s), initial=0.0)))
    dual_neg = max(0.0,
                   float(-np.min(sol.duals, initial=0.0)),
                   float(-np.min(sol.duals_lower, initial=0.0)),
                   float(-np.min(sol.duals_upper, initial=0.0)))
    return max(stationarity, primal, dual_neg, comp)


def dump_problem(prob: QuadraticProgram, path) -> None:
    """Text dump of (P, q, G, h, bounds) for external cross-checking."""
    with open(path, "w") as f:
        for name, arr in (("P", prob.P), ("q", prob.q), ("G", prob.G),
                          ("h", prob.h), ("lower", prob.lower),
                          ("upper", prob.upper)):
            f.write(f"# {name} {arr.shape}\n")
            np.savetxt(f, np.atleast_2d(arr), fmt="%.17g")
