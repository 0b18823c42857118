"""Relax-tighten-round driver: lower bounds from the relaxation, upper bounds
from rounded valve placements, flow-bound tightening in between.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import BoundsBox, initial_box
from .heuristic import FeasiblePoint, build_feasible_solution, round_valve_vector, try_hydraulics
from .hydraulics import HeadlossCoefficients, NlpOutcome, fit_network_coefficients
from .network import NetworkGraph, ProblemConfig
from .obbt import tighten_flow_bounds
from .relaxation import assemble_relaxation, solve_relaxation

log = logging.getLogger(__name__)

STATUS_SOLVED = "solved"
STATUS_NO_SOLUTION = "no-feasible-solution"
STATUS_INFEASIBLE = "infeasible"


def compute_gap(ub: float, lb: float) -> float:
    """Worst-case optimality gap ``100 (UB - LB) / LB`` in percent."""
    if not lb > 0:
        raise ValueError(f"relative gap undefined for LB = {lb}; report UB - LB = {ub - lb} instead")
    return 100.0 * (ub - lb) / lb


@dataclass
class IterationRecord:
    iteration: int
    lb: float
    v_frac: np.ndarray
    v_hat: np.ndarray
    f_azp: float | None
    obbt_time: float | None
    lp_rows: int
    lp_cols: int


@dataclass
class RtrResult:
    status: str
    lb: float | None
    ub: float | None
    gap: float | None
    config: ProblemConfig
    best: FeasiblePoint | None = None
    trace: list = field(default_factory=list)
    cpu_time: float = 0.0
    box: BoundsBox | None = None

    @property
    def bounds_consistent(self) -> bool:
        if self.lb is None or self.ub is None:
            return True
        return self.lb <= self.ub + 1e-6 * abs(self.ub)

    def to_dict(self, net: NetworkGraph, record_time: bool = False) -> dict:
        best = self.best
        out = {
            "status": self.status, "LB": self.lb, "UB": self.ub, "gap_percent": self.gap,
            "f_azp": best.f_azp if best else None, "f_atd": best.f_atd if best else None,
            "n_v": self.config.n_v, "n_b": self.config.n_b,
            "settings": {"m": self.config.m, "eps_tol": self.config.eps_tol, "i_max": self.config.i_max},
            "iterations": len(self.trace),
            "bounds_consistent": self.bounds_consistent,
        }
        if best is not None:
            n_p = net.n_p
            out["valves"] = [{"link": net.links[j % n_p].id, "direction": "+" if j < n_p else "-"}
                             for j in np.flatnonzero(best.v_hat > 0.5)]
            out["boosters"] = [net.demand_nodes[i].id for i in np.flatnonzero(best.v_b > 0.5)]
            out["audit"] = best.audit
        if record_time:
            out["cpu_time_s"] = self.cpu_time
        return out

    def write(self, net: NetworkGraph, out_dir, record_time: bool = False) -> None:
        """``result.json``, ``result.csv``, ``trace.csv`` and, with a solution, schedule CSVs."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "result.json").write_text(json.dumps(self.to_dict(net, record_time), indent=2) + "\n",
                                              encoding="utf-8")
        fmt = lambda v: "" if v is None else repr(float(v))
        with open(out_dir / "result.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_v", "n_b", "gap_percent", "UB", "LB", "cpu_time_s"])
            w.writerow([self.config.n_v, self.config.n_b, fmt(self.gap), fmt(self.ub), fmt(self.lb),
                        fmt(self.cpu_time) if record_time else ""])
        with open(out_dir / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "LB", "f_azp", "obbt_time_s", "lp_rows", "lp_cols"])
            for rec in self.trace:
                w.writerow([rec.iteration, fmt(rec.lb), "failed" if rec.f_azp is None else fmt(rec.f_azp),
                            fmt(rec.obbt_time) if record_time and rec.obbt_time is not None else "",
                            rec.lp_rows, rec.lp_cols])
        if self.best is not None:
            write_schedules(net, self.best, out_dir)


def write_schedules(net: NetworkGraph, point: FeasiblePoint, out_dir) -> None:
    out_dir = Path(out_dir)
    st, qs = point.hydraulics, point.quality
    tables = [
        ("valves.csv", "link_id", "eta", [link.id for link in net.links], st.eta),
        ("boosters.csv", "node_id", "xi", [n.id for n in net.demand_nodes], qs.xi),
        ("sources.csv", "source_id", "c", [s.id for s in net.source_nodes], qs.c[net.n_n:]),
    ]
    for name, id_col, val_col, ids, arr in tables:
        with open(out_dir / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([id_col, "time", val_col])
            for idx, eid in enumerate(ids):
                for k in range(net.n_t):
                    w.writerow([eid, k, repr(float(arr[idx, k]))])


def _relative_change(lb: float, prev: float) -> float:
    if lb == prev:
        return 0.0
    return abs(lb - prev) / abs(prev) if prev != 0 else float("inf")


def run_rtr(net: NetworkGraph, config: ProblemConfig, coeffs: HeadlossCoefficients | None = None,
            box: BoundsBox | None = None, threads: int = 1, backend: str = "highs") -> RtrResult:
    """Alternate relaxation, rounding with a hydraulic solve, and one tightening sweep.

    The loop stops after ``i_max`` iterations or once the relative change of
    the lower bound falls to ``eps_tol`` (never at the first iteration).  The
    booster program runs once, on the hydraulic solution with the smallest
    average zone pressure (earliest iteration on ties).
    """
    config.validate(net)
    t0 = time.process_time()
    coeffs = coeffs or fit_network_coefficients(net)
    box = box or initial_box(net, coeffs)
    trace: list[IterationRecord] = []
    best_hyd: tuple[NlpOutcome, np.ndarray] | None = None
    i = 1
    while True:
        rel = assemble_relaxation(net, coeffs, box, config.m, config.n_v, config.n_b)
        sol = solve_relaxation(rel, backend=backend)
        if not sol.optimal:
            log.info("relaxation %s at iteration %d", sol.status, i)
            lbs = [r.lb for r in trace]
            return RtrResult(STATUS_INFEASIBLE, max(lbs) if lbs else None, None, None, config,
                             trace=trace, cpu_time=time.process_time() - t0, box=box)
        v_frac = rel.valves(sol.x)
        v_hat = round_valve_vector(v_frac, config.n_v)
        hyd = try_hydraulics(net, coeffs, v_hat, config.m, box)
        if hyd is not None and (best_hyd is None or hyd.f_azp < best_hyd[0].f_azp):
            best_hyd = (hyd, v_hat)
        rec = IterationRecord(i, sol.objective, v_frac, v_hat, None if hyd is None else hyd.f_azp, None,
                              rel.lp.n_rows, rel.lp.n_vars)
        trace.append(rec)
        log.info("iteration %d: LB %.10g, AZP %s", i, rec.lb, rec.f_azp)
        done = i == config.i_max or (
            i > 1 and _relative_change(rec.lb, trace[-2].lb) <= config.eps_tol)
        if done:
            break
        t_s = time.perf_counter()
        box, _ = tighten_flow_bounds(net, coeffs, box, config.m, config.n_v, threads=threads,
                                     backend=backend)
        rec.obbt_time = time.perf_counter() - t_s
        i += 1
    lb = max(r.lb for r in trace)
    if best_hyd is None:
        return RtrResult(STATUS_NO_SOLUTION, lb, None, None, config, trace=trace,
                         cpu_time=time.process_time() - t0, box=box)
    hyd, v_hat = best_hyd
    point = build_feasible_solution(net, coeffs, v_hat, config.n_b, config.m, hydraulic=hyd)
    ub = point.ub
    gap = compute_gap(ub, lb) if lb > 0 else None
    res = RtrResult(STATUS_SOLVED, lb, ub, gap, config, point, trace, time.process_time() - t0, box)
    if not res.bounds_consistent:
        log.warning("lower bound %.12g exceeds upper bound %.12g", lb, ub)
    return res
