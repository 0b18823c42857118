"""Optimisation-based tightening of flow bounds on per-step hydraulic relaxations.

One sweep solves, for every step ``k``, link ``l`` and sign, the LP
``min +/- q[l, k]`` over the step-``k`` relaxation with step-local relaxed
valve indicators.  All LPs of a sweep see the bounds frozen at its start;
the new intervals are merged afterwards, which makes a sweep independent of
visit order and lets the steps run in parallel.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bounds import BoundsBox
from .hydraulics import HeadlossCoefficients, build_step_relaxation
from .network import NetworkGraph
from .solvers import INFEASIBLE, OPTIMAL, lp_solve

# widening of each new bound, absorbing LP feasibility tolerance
SAFETY = 1e-9


class ObbtInfeasible(RuntimeError):
    """A per-step relaxation is infeasible, so the instance has no feasible point."""


@dataclass
class ObbtReport:
    old_min: np.ndarray
    old_max: np.ndarray
    new_min: np.ndarray
    new_max: np.ndarray
    status_min: np.ndarray
    status_max: np.ndarray
    wall_time: float

    def to_csv(self, net: NetworkGraph, path, record_time: bool = False) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["link_id", "time", "old_q_min", "old_q_max", "new_q_min", "new_q_max",
                          "status_min", "status_max"])
            for l, link in enumerate(net.links):
                for k in range(net.n_t):
                    out.writerow([link.id, k, repr(float(self.old_min[l, k])), repr(float(self.old_max[l, k])),
                                  repr(float(self.new_min[l, k])), repr(float(self.new_max[l, k])),
                                  self.status_min[l, k], self.status_max[l, k]])
            if record_time:
                out.writerow(["# wall_time_s", repr(self.wall_time)])


def _sweep_step(net, coeffs, box, k, m, n_v, use_history, backend):
    b = build_step_relaxation(net, coeffs, box, k, m, n_v, objective=None, use_history=use_history)
    base = b.build()
    cols = b.columns([("q", l, k) for l in range(net.n_p)])
    lo = np.empty(net.n_p)
    hi = np.empty(net.n_p)
    st_lo, st_hi = [], []
    for l in range(net.n_p):
        for sigma in (1.0, -1.0):
            c = np.zeros(base.n_vars)
            c[cols[l]] = sigma
            sol = lp_solve(base.with_objective(c), backend=backend)
            if sol.status != OPTIMAL:
                if sol.status == INFEASIBLE:
                    raise ObbtInfeasible(f"hydraulic relaxation at step {k} is infeasible: "
                                         "no feasible point exists for these bounds")
                raise RuntimeError(f"bound-tightening LP at step {k}, link {net.links[l].id!r}: {sol.status}")
            val = sigma * sol.objective
            if sigma > 0:
                lo[l] = val
                st_lo.append(sol.status)
            else:
                hi[l] = val
                st_hi.append(sol.status)
    return k, lo, hi, st_lo, st_hi


def tighten_flow_bounds(net: NetworkGraph, coeffs: HeadlossCoefficients, box: BoundsBox, m: int = 5,
                        n_v: int = 0, threads: int = 1, use_history: bool = True,
                        backend: str = "highs") -> tuple[BoundsBox, ObbtReport]:
    """One tightening sweep; returns the new box and a per-(link, step) report."""
    t0 = time.perf_counter()
    n_p, n_t = box.shape
    new_min = box.q_min.copy()
    new_max = box.q_max.copy()
    st_min = np.empty((n_p, n_t), dtype=object)
    st_max = np.empty((n_p, n_t), dtype=object)
    args = [(net, coeffs, box, k, m, n_v, use_history, backend) for k in range(n_t)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _sweep_step(*a), args))
    else:
        results = [_sweep_step(*a) for a in args]
    for k, lo, hi, s_lo, s_hi in results:
        lo = lo - SAFETY * (1.0 + np.abs(lo))
        hi = hi + SAFETY * (1.0 + np.abs(hi))
        new_min[:, k] = np.clip(lo, box.q_min[:, k], box.q_max[:, k])
        new_max[:, k] = np.clip(hi, box.q_min[:, k], box.q_max[:, k])
        st_min[:, k] = s_lo
        st_max[:, k] = s_hi
    # numerical noise on a collapsed interval must not invert it
    swap = new_min > new_max
    mid = 0.5 * (new_min + new_max)
    new_min = np.where(swap, mid, new_min)
    new_max = np.where(swap, mid, new_max)
    new_box = box.tightened(new_min, new_max, coeffs)
    report = ObbtReport(box.q_min.copy(), box.q_max.copy(), new_min, new_max, st_min, st_max,
                        time.perf_counter() - t0)
    return new_box, report


def run_sweeps(net, coeffs, box, sweeps: int, **kw):
    """``sweeps`` consecutive sweeps; returns the final box and all reports."""
    reports = []
    for _ in range(sweeps):
        box, rep = tighten_flow_bounds(net, coeffs, box, **kw)
        reports.append(rep)
    return box, reports
