"""Best-first branch and bound over binary variables."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .lp import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, LpProblem, LpSolution, lp_solve


@dataclass
class MilpProblem:
    lp: LpProblem
    binaries: np.ndarray

    def __post_init__(self):
        self.binaries = np.asarray(self.binaries, dtype=int)
        n = self.lp.n_vars
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= n):
            raise ValueError("binary index out of range")


@dataclass
class MilpSolution(LpSolution):
    binaries: np.ndarray | None = None
    bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0


def _most_fractional(x: np.ndarray, idx: np.ndarray, int_tol: float) -> int:
    vals = x[idx]
    frac = np.abs(vals - np.round(vals))
    cand = frac > int_tol
    if not cand.any():
        return -1
    dist = np.where(cand, np.abs(vals - 0.5), np.inf)
    # argmin returns the first, i.e. smallest, index on ties
    return int(idx[int(np.argmin(dist))])


def milp_solve(p: MilpProblem, gap_tol: float = 1e-6, node_limit: int = 100_000,
               backend: str = "highs", int_tol: float = 1e-6) -> MilpSolution:
    """Solve ``p`` to a relative gap of ``gap_tol``.

    Nodes are explored best-bound first; the branching variable is the most
    fractional binary, ties going to the smallest column index.  When the node
    limit is hit the incumbent is returned with status ``iteration-limit`` and
    the achieved gap.
    """
    lp = p.lp
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    lb0[p.binaries] = np.maximum(lb0[p.binaries], 0.0)
    ub0[p.binaries] = np.minimum(ub0[p.binaries], 1.0)

    counter = itertools.count()
    heap: list = []
    nodes = 0
    incumbent: LpSolution | None = None
    inc_obj = math.inf

    def solve_node(lb, ub):
        nonlocal nodes
        nodes += 1
        return lp_solve(lp.with_bounds(lb, ub), backend=backend)

    def prunable(bound: float) -> bool:
        return bound >= inc_obj - gap_tol * max(abs(inc_obj), 1e-12)

    root = solve_node(lb0, ub0)
    if root.status == INFEASIBLE:
        return MilpSolution(INFEASIBLE, nodes=nodes, message="LP relaxation infeasible")
    if root.status != OPTIMAL:
        return MilpSolution(root.status, nodes=nodes, message=root.message)
    heapq.heappush(heap, (root.objective, next(counter), lb0, ub0, root))

    while heap:
        bound, _, lb, ub, sol = heapq.heappop(heap)
        if prunable(bound):
            continue
        j = _most_fractional(sol.x, p.binaries, int_tol)
        if j < 0:
            incumbent, inc_obj = sol, sol.objective
            continue
        if nodes >= node_limit:
            heapq.heappush(heap, (bound, next(counter), lb, ub, sol))
            break
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            child = solve_node(clb, cub)
            if child.status == OPTIMAL and not prunable(child.objective):
                heapq.heappush(heap, (child.objective, next(counter), clb, cub, child))

    open_bound = min((item[0] for item in heap), default=math.inf)
    if incumbent is None:
        status = INFEASIBLE if not heap else ITERATION_LIMIT
        return MilpSolution(status, nodes=nodes, bound=open_bound,
                            message="no integer-feasible point found")
    best_bound = min(open_bound, inc_obj)
    gap = (inc_obj - best_bound) / max(abs(inc_obj), 1e-12)
    status = OPTIMAL if gap <= gap_tol else ITERATION_LIMIT
    x = incumbent.x.copy()
    x[p.binaries] = np.round(x[p.binaries])
    return MilpSolution(status, inc_obj, x, incumbent.duals, incumbent.reduced_costs,
                        incumbent.iterations, binaries=x[p.binaries].astype(int),
                        bound=best_bound, gap=max(gap, 0.0), nodes=nodes)
