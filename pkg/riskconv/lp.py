"""
A small dense two-phase simplex solver.

The linear programs in this package are tiny (dual sets of risk measures on a
few dozen atoms), so a straightforward tableau implementation is all that is needed.
The calling convention follows scipy.optimize.linprog:

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lb <= x <= ub      (bounds, default (0, None))
"""

import logging
import numpy as np
from .shared import StructuralError, Tolerances


logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


class LPResult:
    def __init__(self, status, x=None, fun=None, iterations=0, residual=None):
        self.status = status
        self.x = x
        self.fun = fun
        self.iterations = iterations
        self.residual = residual

    @property
    def success(self):
        return self.status == OPTIMAL

    def __repr__(self):
        return "<LPResult {:s} fun={} iterations={:d}>".format(self.status, self.fun, self.iterations)


class _Tableau:
    degenerate_limit = 50

    def __init__(self, A, b, basis, tol, max_iter):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, -1] = b
        self.basis = list(basis)
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0

    def set_objective(self, cost):
        m = len(self.basis)
        cost = np.asarray(cost, dtype=float)
        cb = cost[self.basis]
        self.T[m, :-1] = cost - cb @ self.T[:m, :-1]
        self.T[m, -1] = -cb @ self.T[:m, -1]

    def pivot(self, row, col):
        T = self.T
        T[row, :] /= T[row, col]
        factors = T[:, col].copy()
        factors[row] = 0.0
        T -= np.outer(factors, T[row, :])
        T[:, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1

    def optimize(self, allowed):
        """Run simplex iterations; `allowed` masks the columns that may enter. Returns a status."""
        T = self.T
        m = len(self.basis)
        bland = False
        degenerate = 0
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            reduced = np.where(allowed, T[m, :-1], 0.0)
            candidates = np.flatnonzero(reduced < -self.tol)
            if len(candidates) == 0:
                return OPTIMAL
            col = candidates[0] if bland else candidates[np.argmin(reduced[candidates])]
            column = T[:m, col]
            rows = np.flatnonzero(column > self.tol)
            if len(rows) == 0:
                return UNBOUNDED
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + self.tol]
            row = min(ties, key=lambda r: self.basis[r])
            if best <= self.tol:
                degenerate += 1
                if degenerate >= self.degenerate_limit and not bland:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0
            self.pivot(row, col)

    def drop_row(self, row):
        self.T = np.delete(self.T, row, axis=0)
        del self.basis[row]

    def solution(self, n):
        z = np.zeros(self.T.shape[1] - 1)
        m = len(self.basis)
        z[self.basis] = np.clip(self.T[:m, -1], 0.0, None)
        return z[:n]


def _normalize_bounds(bounds, n):
    if bounds is None:
        return [(0.0, None)] * n
    if len(bounds) == 2 and not isinstance(bounds[0], (tuple, list)):
        # a single (lo, hi) pair applies to every variable
        return [tuple(bounds)] * n
    if len(bounds) != n:
        raise StructuralError("expected {:d} bounds, got {:d}".format(n, len(bounds)))
    return [tuple(b) for b in bounds]


def _as_matrix(A, b, n, name):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[1] != n or A.shape[0] != len(b):
        raise StructuralError("{:s} has shape {} incompatible with {:d} variables and {:d} rows".format(name, A.shape, n, len(b)))
    return A, b


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, tol=None, max_iter=20000):
    c = np.asarray(c, dtype=float)
    n = len(c)
    tol = Tolerances.lp_pivot if tol is None else tol
    A_ub, b_ub = _as_matrix(A_ub, b_ub, n, "A_ub")
    A_eq, b_eq = _as_matrix(A_eq, b_eq, n, "A_eq")
    bounds = _normalize_bounds(bounds, n)

    # x = offset + M @ z with z >= 0
    offset = np.zeros(n)
    columns = []
    extra_rows = []
    for j, (lo, hi) in enumerate(bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            return LPResult(INFEASIBLE)
        if np.isfinite(lo):
            offset[j] = lo
            columns.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(columns) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))
    M = np.zeros((n, len(columns)))
    for k, (j, sign) in enumerate(columns):
        M[j, k] = sign
    nz = len(columns)

    ub_rows = A_ub @ M
    ub_rhs = b_ub - A_ub @ offset
    if extra_rows:
        bound_rows = np.zeros((len(extra_rows), nz))
        for r, (k, width) in enumerate(extra_rows):
            bound_rows[r, k] = 1.0
        ub_rows = np.vstack([ub_rows, bound_rows])
        ub_rhs = np.concatenate([ub_rhs, [w for _, w in extra_rows]])
    eq_rows = A_eq @ M
    eq_rhs = b_eq - A_eq @ offset

    m_ub, m_eq = len(ub_rhs), len(eq_rhs)
    m = m_ub + m_eq
    A = np.zeros((m, nz + m_ub))
    A[:m_ub, :nz] = ub_rows
    A[:m_ub, nz:] = np.eye(m_ub)
    A[m_ub:, :nz] = eq_rows
    b = np.concatenate([ub_rhs, eq_rhs])
    negative = b < 0
    A[negative] *= -1
    b[negative] *= -1

    # slacks with +1 and nonnegative rhs start in the basis, the other rows get artificials
    needs_artificial = [r for r in range(m) if r >= m_ub or negative[r]]
    n_struct = nz + m_ub
    A_full = np.hstack([A, np.zeros((m, len(needs_artificial)))])
    basis = [nz + r if r < m_ub else -1 for r in range(m)]
    for a, r in enumerate(needs_artificial):
        A_full[r, n_struct + a] = 1.0
        basis[r] = n_struct + a
    tableau = _Tableau(A_full, b, basis, tol, max_iter)
    n_total = A_full.shape[1]

    if needs_artificial:
        phase_one = np.zeros(n_total)
        phase_one[n_struct:] = 1.0
        tableau.set_objective(phase_one)
        status = tableau.optimize(np.ones(n_total, dtype=bool))
        if status == ITERATION_LIMIT:
            return LPResult(status, iterations=tableau.iterations)
        infeasibility = -tableau.T[-1, -1]
        if infeasibility > max(tol, 1e-9) * max(1.0, np.abs(b).max(initial=0.0)):
            logger.debug("phase one ended with infeasibility %.3g", infeasibility)
            return LPResult(INFEASIBLE, iterations=tableau.iterations, residual=infeasibility)
        row = 0
        while row < len(tableau.basis):
            if tableau.basis[row] >= n_struct:
                entries = np.abs(tableau.T[row, :n_struct])
                j = int(np.argmax(entries)) if n_struct else 0
                if n_struct and entries[j] > tol:
                    tableau.pivot(row, j)
                else:
                    tableau.drop_row(row)
                    continue
            row += 1
        tableau.T = np.delete(tableau.T, np.s_[n_struct:n_total], axis=1)

    cost = np.zeros(n_struct)
    cost[:nz] = c @ M
    tableau.set_objective(cost)
    status = tableau.optimize(np.ones(n_struct, dtype=bool))
    if status != OPTIMAL:
        return LPResult(status, iterations=tableau.iterations)
    z = tableau.solution(nz)
    x = offset + M @ z
    violation = 0.0
    if len(b_ub):
        violation = max(violation, float(np.max(A_ub @ x - b_ub)))
    if len(b_eq):
        violation = max(violation, float(np.max(np.abs(A_eq @ x - b_eq))))
    return LPResult(OPTIMAL, x=x, fun=float(c @ x), iterations=tableau.iterations, residual=max(violation, 0.0))
