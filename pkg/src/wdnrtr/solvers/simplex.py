"""Dense bounded-variable revised simplex.

Rows are brought to equality form ``A x - s = 0`` with each slack ``s_i``
carrying the row's sense as bounds.  Phase 1 minimises the sum of artificial
variables started from a bound-feasible nonbasic point; phase 2 fixes the
artificials at zero.  Dantzig pricing is used until 50 consecutive degenerate
pivots have been seen, after which Bland's rule takes over for the rest of the
solve, which rules out cycling.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .lp import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LpProblem, LpSolution

_DEGENERATE_SWITCH = 50


def _geometric_scaling(M: np.ndarray, passes: int = 4):
    m, n = M.shape
    rs = np.ones(m)
    cs = np.ones(n)
    absM = np.abs(M)
    nz = absM > 0
    for _ in range(passes):
        S = absM * rs[:, None] * cs[None, :]
        for i in range(m):
            v = S[i, nz[i]]
            if v.size:
                rs[i] /= math.sqrt(v.min() * v.max())
        S = absM * rs[:, None] * cs[None, :]
        for j in range(n):
            v = S[nz[:, j], j]
            if v.size:
                cs[j] /= math.sqrt(v.min() * v.max())
    return rs, cs


class _Tableau:
    def __init__(self, M, lb, ub, x, basis, tol):
        self.M = M
        self.lb = lb
        self.ub = ub
        self.x = x
        self.basis = list(basis)
        self.tol = tol
        self.bland = False
        self.degenerate = 0
        self.iterations = 0

    def _factor(self):
        return lu_factor(self.M[:, self.basis])

    def _nonbasic_mask(self):
        mask = np.ones(self.M.shape[1], dtype=bool)
        mask[self.basis] = False
        return mask

    def solve(self, cost, max_iter):
        """Run simplex pivots for ``cost``; returns a status string."""
        tol = self.tol
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            lu = self._factor()
            nb = self._nonbasic_mask()
            xB = lu_solve(lu, -(self.M[:, nb] @ self.x[nb]))
            self.x[self.basis] = xB
            y = lu_solve(lu, cost[self.basis], trans=1)
            d = cost - self.M.T @ y
            j, direction = self._price(d, nb)
            if j < 0:
                self.y = y
                self.d = d
                return OPTIMAL
            alpha = lu_solve(lu, self.M[:, j])
            rate = -direction * alpha
            t_best = math.inf
            leave = -1
            leave_bound = 0.0
            for r, bj in enumerate(self.basis):
                ri = rate[r]
                if ri < -1e-11:
                    bound = self.lb[bj]
                elif ri > 1e-11:
                    bound = self.ub[bj]
                else:
                    continue
                if not math.isfinite(bound):
                    continue
                t = max((bound - self.x[bj]) / ri, 0.0)
                if t < t_best - 1e-12 or (abs(t - t_best) <= 1e-12 and self.bland and bj < self.basis[leave]):
                    t_best, leave, leave_bound = t, r, bound
            t_flip = self.ub[j] - self.lb[j]
            if t_flip <= t_best:
                if not math.isfinite(t_flip):
                    return UNBOUNDED
                self.x[j] = self.ub[j] if direction > 0 else self.lb[j]
                step = t_flip
            else:
                if not math.isfinite(t_best):
                    return UNBOUNDED
                self.x[j] += direction * t_best
                out = self.basis[leave]
                self.basis[leave] = j
                self.x[out] = leave_bound
                step = t_best
            self.iterations += 1
            if step <= 1e-12:
                self.degenerate += 1
                if self.degenerate >= _DEGENERATE_SWITCH:
                    self.bland = True
            else:
                self.degenerate = 0

    def _price(self, d, nb):
        tol = self.tol
        best_j, best_dir, best_score = -1, 0, 0.0
        for j in np.flatnonzero(nb):
            lo, hi, xj, dj = self.lb[j], self.ub[j], self.x[j], d[j]
            if lo == hi:
                continue
            direction = 0
            if dj < -tol and xj < hi - tol:
                direction = 1
            elif dj > tol and xj > lo + tol:
                direction = -1
            if direction == 0:
                continue
            if self.bland:
                return int(j), direction
            if abs(dj) > best_score:
                best_j, best_dir, best_score = int(j), direction, abs(dj)
        return best_j, best_dir


def simplex_solve(p: LpProblem, max_iter: int | None = None, tol: float = 1e-9) -> LpSolution:
    m, n = p.A.shape
    A = p.A.toarray()
    lo_s = np.where(p.sense == "G", p.rhs, np.where(p.sense == "E", p.rhs, -np.inf))
    hi_s = np.where(p.sense == "L", p.rhs, np.where(p.sense == "E", p.rhs, np.inf))
    M = np.hstack([A, -np.eye(m)])
    lb = np.concatenate([p.lb, lo_s])
    ub = np.concatenate([p.ub, hi_s])
    cost = np.concatenate([p.c, np.zeros(m)])
    rs, cs = _geometric_scaling(M)
    Ms = rs[:, None] * M * cs[None, :]
    lbs, ubs, costs = lb / cs, ub / cs, cost * cs
    N = n + m
    x0 = np.where(np.isfinite(lbs), lbs, np.where(np.isfinite(ubs), ubs, 0.0))
    resid = -(Ms @ x0)
    sign = np.where(resid >= 0, 1.0, -1.0)
    full = np.hstack([Ms, np.diag(sign)])
    lb_all = np.concatenate([lbs, np.zeros(m)])
    ub_all = np.concatenate([ubs, np.full(m, np.inf)])
    x = np.concatenate([x0, np.abs(resid)])
    if max_iter is None:
        max_iter = 50 * (N + m) + 1000
    tab = _Tableau(full, lb_all, ub_all, x, range(N, N + m), tol)
    phase1 = np.concatenate([np.zeros(N), np.ones(m)])
    status = tab.solve(phase1, max_iter)
    if status != OPTIMAL:
        return LpSolution(ITERATION_LIMIT, iterations=tab.iterations, message="phase 1 stalled")
    infeas = float(np.sum(tab.x[N:]))
    if infeas > 1e-8 * max(1.0, float(np.max(np.abs(x0), initial=0.0))):
        return LpSolution(INFEASIBLE, iterations=tab.iterations, message=f"phase 1 residual {infeas:.3e}")
    tab.ub[N:] = 0.0
    tab.x[N:] = np.minimum(tab.x[N:], 0.0)
    phase2 = np.concatenate([costs, np.zeros(m)])
    status = tab.solve(phase2, max_iter)
    if status != OPTIMAL:
        return LpSolution(status, iterations=tab.iterations)
    xs = tab.x[:N] * cs
    xv = xs[:n]
    y = rs * tab.y
    d = p.c - p.A.T @ y
    viol = max(float(np.max(p.row_violations(xv), initial=0.0)), float(np.max(p.bound_violations(xv), initial=0.0)))
    if viol > 1e-6 * max(1.0, float(np.max(np.abs(xv), initial=0.0))):
        return LpSolution(ITERATION_LIMIT, iterations=tab.iterations,
                          message=f"numerical breakdown: primal violation {viol:.3e}")
    return LpSolution(OPTIMAL, float(p.c @ xv + p.c0), xv, y, d, tab.iterations)
