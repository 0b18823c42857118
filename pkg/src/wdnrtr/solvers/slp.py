"""Sequential linear programming with an l1 trust region.

The nonlinear equalities ``g(x) = 0`` are linearised at the current iterate
and made elastic, ``g + J (x' - x) = p - n`` with ``p, n >= 0`` charged at the
penalty weight.  Steps are accepted on the ratio of actual to predicted
reduction of the merit ``c @ x + penalty * ||g(x)||_1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .lp import LpProblem, lp_solve

log = logging.getLogger(__name__)

CONVERGED = "converged"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"


@dataclass
class NlpModel:
    """Linear part (objective, rows, bounds) plus nonlinear equality callbacks."""

    lp: LpProblem
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sp.spmatrix]
    trust_mask: np.ndarray | None = None


@dataclass
class SlpResult:
    status: str
    x: np.ndarray
    objective: float
    residual_norm: float
    iterations: int
    penalty: float
    merit_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _subproblem(model: NlpModel, x, g, J, radius, penalty) -> LpProblem:
    lp = model.lp
    n = lp.n_vars
    ng = g.size
    mask = model.trust_mask if model.trust_mask is not None else np.ones(n, dtype=bool)
    lb = lp.lb.copy()
    ub = lp.ub.copy()
    lb[mask] = np.maximum(lb[mask], x[mask] - radius)
    ub[mask] = np.minimum(ub[mask], x[mask] + radius)
    eye = sp.identity(ng, format="csr")
    A_lin = sp.hstack([J, -eye, eye], format="csr")
    A = sp.vstack([sp.hstack([lp.A, sp.csr_matrix((lp.n_rows, 2 * ng))]), A_lin], format="csr")
    rhs = np.concatenate([lp.rhs, J @ x - g])
    sense = np.concatenate([lp.sense, np.full(ng, "E")])
    c = np.concatenate([lp.c, np.full(2 * ng, penalty)])
    return LpProblem(c, A, sense, rhs, np.concatenate([lb, np.zeros(2 * ng)]),
                     np.concatenate([ub, np.full(2 * ng, np.inf)]), lp.c0)


def slp_solve(model: NlpModel, x0, radius: float = 1.0, max_iter: int = 200,
              step_tol: float = 1e-9, feas_tol: float = 1e-6, progress_tol: float = 1e-9,
              penalty: float | None = None, backend: str = "highs",
              max_penalty_doublings: int = 30) -> SlpResult:
    """Drive ``model`` to a local solution from ``x0``.

    The trust box (half-width ``radius``) applies to the variables flagged in
    ``model.trust_mask``; it is halved on a rejected step and doubled after a
    strong accept that touched its boundary.
    """
    lp = model.lp
    x = np.clip(np.asarray(x0, dtype=float), lp.lb, lp.ub)
    if penalty is None:
        penalty = 10.0 * max(float(np.max(np.abs(lp.c), initial=0.0)), 1e-12)
    c = lp.c

    def merit(xv, gv):
        return float(c @ xv) + penalty * float(np.sum(np.abs(gv)))

    g = model.residual(x)
    restoring = float(np.max(lp.row_violations(x), initial=0.0)) > 1e-9
    history = [merit(x, g)]
    doublings = 0
    it = 0
    status = ITERATION_LIMIT
    while it < max_iter:
        it += 1
        J = sp.csr_matrix(model.jacobian(x))
        sub = _subproblem(model, x, g, J, radius, penalty)
        sol = lp_solve(sub, backend=backend)
        if not sol.optimal:
            if restoring or radius < step_tol:
                status = INFEASIBLE
                break
            radius *= 0.5
            continue
        n = lp.n_vars
        xn = sol.x[:n]
        elastic = float(np.sum(sol.x[n:]))
        m0 = merit(x, g)
        predicted = m0 - (float(c @ xn) + penalty * elastic)
        gn = model.residual(xn)
        step = float(np.max(np.abs(xn - x), initial=0.0))
        if restoring:
            x, g, restoring = xn, gn, False
            history.append(merit(x, g))
            continue
        gnorm = float(np.max(np.abs(g), initial=0.0))
        if predicted <= 1e-12 * max(1.0, abs(m0)) or step < step_tol:
            if gnorm <= feas_tol:
                status = CONVERGED
                break
            if doublings < max_penalty_doublings:
                penalty *= 2.0
                doublings += 1
                continue
            status = INFEASIBLE
            break
        actual = m0 - merit(xn, gn)
        ratio = actual / predicted
        if ratio >= 0.1:
            obj_change = abs(float(c @ xn) - float(c @ x))
            x, g = xn, gn
            history.append(merit(x, g))
            if ratio > 0.75 and step >= 0.99 * radius:
                radius *= 2.0
            gnorm = float(np.max(np.abs(g), initial=0.0))
            if gnorm <= feas_tol and (obj_change <= progress_tol or step < step_tol):
                status = CONVERGED
                break
        else:
            radius *= 0.5
            if radius < step_tol:
                status = CONVERGED if gnorm <= feas_tol else INFEASIBLE
                break
    gnorm = float(np.max(np.abs(g), initial=0.0))
    if status == ITERATION_LIMIT and gnorm > feas_tol:
        log.debug("SLP hit the iteration limit with residual %.3e", gnorm)
    return SlpResult(status, x, float(c @ x + lp.c0), gnorm, it, penalty, history)
