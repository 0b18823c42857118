"""Rounding of fractional valve vectors and the sequential hydraulic-then-quality
construction of feasible points, with an audit against every constraint family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundsBox, initial_box
from .hydraulics import (HeadlossCoefficients, HydraulicInfeasible, HydraulicState, NlpOutcome,
                         eval_headloss, recover_aux, solve_fixed_valve_nlp)
from .network import NetworkGraph
from .quality import QualityState, assemble_quality_milp, compute_atd, quality_state_from_solution
from .relaxation import assemble_linear_model
from .solvers import INFEASIBLE, milp_solve

AUDIT_TOL = 1e-6


def round_valve_vector(v, n_v: int) -> np.ndarray:
    """Keep the stronger direction per link, then the ``n_v`` strongest links.

    Ties favour the positive direction within a link and the smaller link
    index across links.
    """
    v = np.asarray(v, dtype=float)
    n_p = v.size // 2
    pos, neg = v[:n_p], v[n_p:]
    use_neg = neg > pos
    best = np.where(use_neg, neg, pos)
    # stable sort on -best keeps smaller link ids first among equal values
    order = np.argsort(-best, kind="stable")[:n_v]
    v_hat = np.zeros(2 * n_p)
    for l in order:
        v_hat[l + n_p if use_neg[l] else l] = 1.0
    return v_hat


class ConstructionError(RuntimeError):
    """The quality stage failed on a hydraulically feasible point."""


@dataclass
class FeasiblePoint:
    v_hat: np.ndarray
    hydraulics: HydraulicState
    quality: QualityState
    v_b: np.ndarray
    f_azp: float
    f_atd: float
    audit: dict = field(default_factory=dict)

    @property
    def ub(self) -> float:
        return self.f_azp + self.f_atd


def solve_quality_stage(net: NetworkGraph, hyd: HydraulicState, n_b: int, gap_tol: float = 1e-9):
    """Optimal booster placement and dosing for a fixed hydraulic state."""
    model = assemble_quality_milp(net, hyd.q, n_b)
    sol = milp_solve(model.problem, gap_tol=gap_tol)
    if sol.status == INFEASIBLE or sol.x is None:
        raise ConstructionError(f"quality program {sol.status}: big-M constants are inconsistent")
    qs, vb = quality_state_from_solution(net, model.builder, sol.x)
    return qs, vb, compute_atd(net, qs.c)


def build_feasible_solution(net: NetworkGraph, coeffs: HeadlossCoefficients, v_hat, n_b: int,
                            m: int = 5, init_box: BoundsBox | None = None,
                            hydraulic: NlpOutcome | None = None) -> FeasiblePoint:
    """Fixed-valve hydraulics followed by the booster program; audited before return.

    Raises :class:`HydraulicInfeasible` when the hydraulic stage fails.
    """
    hyd = hydraulic or solve_fixed_valve_nlp(net, coeffs, v_hat, m=m, init_box=init_box)
    qs, vb, atd = solve_quality_stage(net, hyd.state, n_b)
    point = FeasiblePoint(np.asarray(v_hat, dtype=float), hyd.state, qs, vb, hyd.f_azp, atd)
    point.audit = audit_solution(net, coeffs, point, int(round(np.sum(v_hat))), n_b)
    worst = max(point.audit.values())
    if worst > AUDIT_TOL:
        failing = {k: v for k, v in point.audit.items() if v > AUDIT_TOL}
        raise ConstructionError(f"assembled point fails the audit: {failing}")
    return point


def point_values(net: NetworkGraph, point: FeasiblePoint) -> dict:
    """Map a feasible point onto builder keys."""
    st, qs = point.hydraulics, point.quality
    qp, qm, s, thp, thm, z = recover_aux(st.q, st.theta)
    vals = {}
    for j, v in enumerate(point.v_hat):
        vals[("v", j)] = v
    for i, v in enumerate(point.v_b):
        vals[("vb", i)] = float(v)
    for k in range(net.n_t):
        for l in range(net.n_p):
            for name, arr in (("q", st.q), ("eta", st.eta), ("theta", st.theta), ("s", s), ("qp", qp),
                              ("qm", qm), ("thp", thp), ("thm", thm), ("z", z), ("rho", qs.rho)):
                vals[(name, l, k)] = float(arr[l, k])
            for j in range(net.links[l].segments + 1):
                vals[("r", j, l, k)] = float(qs.r[l][j, k + 1])
                vals[("w", j, l, k)] = float(qs.w[l][j, k])
        for i in range(net.n_n):
            vals[("h", i, k)] = float(st.h[i, k])
            vals[("xi", i, k)] = float(qs.xi[i, k])
            vals[("mu", i, k)] = float(qs.mu[i, k])
        for i in range(net.n_n + net.n_0):
            vals[("c", i, k)] = float(qs.c[i, k])
    return vals


def audit_solution(net: NetworkGraph, coeffs: HeadlossCoefficients, point: FeasiblePoint, n_v: int,
                   n_b: int, box: BoundsBox | None = None) -> dict:
    """Largest violation per constraint family of the full problem at ``point``.

    Families are the linear row tags, ``bounds``, the two nonlinear families
    ``headloss`` and ``bilinear``, and ``integrality`` of all binaries.
    """
    box = box or initial_box(net, coeffs)
    b = assemble_linear_model(net, box, n_v, n_b)
    lp = b.build()
    vals = point_values(net, point)
    x = np.zeros(lp.n_vars)
    for key, j in b.index.items():
        x[j] = vals[key]
    viol = lp.row_violations(x)
    out: dict[str, float] = {}
    for tag, v in zip(b.row_tags, viol):
        out[tag] = max(out.get(tag, 0.0), float(v))
    out["bounds"] = float(np.max(lp.bound_violations(x), initial=0.0))
    st, qs = point.hydraulics, point.quality
    qp, qm, s, thp, thm, z = recover_aux(st.q, st.theta)
    a, bb = coeffs.a[:, None], coeffs.b[:, None]
    hl = max(float(np.max(np.abs(thp - eval_headloss(a, bb, qp)))),
             float(np.max(np.abs(thm - eval_headloss(a, bb, qm)))))
    out["headloss"] = hl
    bil = 0.0
    for l in range(net.n_p):
        bil = max(bil, float(np.max(np.abs(qs.w[l] - s[l][None, :] * qs.r[l][:, 1:]))))
    out["bilinear"] = bil
    bins = np.concatenate([point.v_hat, np.asarray(point.v_b, dtype=float), z.ravel()])
    out["integrality"] = float(np.max(np.abs(bins - np.round(bins)), initial=0.0))
    out["complementarity"] = float(np.max(qp * qm, initial=0.0))
    return out


def try_hydraulics(net, coeffs, v_hat, m, init_box):
    """``solve_fixed_valve_nlp`` returning ``None`` on failure."""
    try:
        return solve_fixed_valve_nlp(net, coeffs, v_hat, m=m, init_box=init_box)
    except HydraulicInfeasible:
        return None
