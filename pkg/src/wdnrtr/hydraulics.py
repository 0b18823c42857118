"""Hydraulic model: fitted friction curves, constraint rows, network analysis and
the fixed-valve pressure-minimisation program.

Head loss across link ``l`` is ``theta = a|q|q + b q`` with ``(a, b)`` fitted to
Hazen-Williams.  Rows are generated per time step into an
:class:`~wdnrtr.solvers.LpBuilder` using keys ``('q', l, k)``, ``('h', i, k)``,
``('eta', l, k)``, ``('theta', l, k)`` and, for the split representation,
``('s'|'qp'|'qm'|'thp'|'thm'|'z', l, k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .bounds import BoundsBox, initial_box
from .cuts import relax_quadratic_scalar, tangent_points
from .network import NetworkGraph, azp_weights
from .solvers import LpBuilder, NlpModel, lp_solve, slp_solve

log = logging.getLogger(__name__)

HW_FACTOR = 10.67
HW_FLOW_EXP = 1.852
HW_DIAM_EXP = 4.871
FIT_SAMPLES = 100
RESIDUAL_TOL = 1e-6


class HydraulicInfeasible(RuntimeError):
    """No hydraulically feasible state exists (or none was found) for a valve placement."""


@dataclass(frozen=True)
class HeadlossCoefficients:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.a) <= 0) or np.any(np.asarray(self.b) < 0):
            raise ValueError("head-loss coefficients need a > 0 and b >= 0")


def hazen_williams(length, diameter, roughness, q):
    """Hazen-Williams head loss (m) for flow ``q`` in L/s, odd-extended to negative flow."""
    q = np.asarray(q, dtype=float)
    mag = HW_FACTOR * length * (np.abs(q) / 1000.0) ** HW_FLOW_EXP / (
        roughness ** HW_FLOW_EXP * diameter ** HW_DIAM_EXP)
    return np.sign(q) * mag


def fit_headloss_coefficients(link, q_ref: float, samples: int = FIT_SAMPLES) -> tuple[float, float]:
    """Nonnegative least-squares fit of ``a q^2 + b q`` to Hazen-Williams on ``[0, q_ref]``."""
    if not q_ref > 0:
        raise ValueError("q_ref must be positive")
    q = np.linspace(0.0, q_ref, samples)
    target = hazen_williams(link.length, link.diameter, link.roughness, q)
    # scale columns so the two regressors have comparable magnitude
    cols = np.column_stack([(q / q_ref) ** 2, q / q_ref])
    (ca, cb), _ = scipy.optimize.nnls(cols, target)
    a, b = ca / q_ref ** 2, cb / q_ref
    if a <= 0:
        raise ValueError(f"degenerate fit for link {link.id!r}: a = {a}")
    return float(a), float(b)


def link_q_ref(link) -> float:
    return float(max(np.max(np.abs(link.q_min)), np.max(np.abs(link.q_max))))


def fit_network_coefficients(net: NetworkGraph) -> HeadlossCoefficients:
    pairs = [fit_headloss_coefficients(link, link_q_ref(link)) for link in net.links]
    return HeadlossCoefficients(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def eval_headloss(a, b, q):
    """``a |q| q + b q``."""
    q = np.asarray(q, dtype=float)
    return a * np.abs(q) * q + b * q


def recover_aux(q, theta):
    """Split representation of flow and head loss: ``(q+, q-, s, theta+, theta-, z)``.

    ``z`` is 1 for strictly positive flow and 0 otherwise, so zero flow maps to 0.
    """
    q = np.asarray(q, dtype=float)
    theta = np.asarray(theta, dtype=float)
    qp = np.maximum(q, 0.0)
    qm = -np.minimum(q, 0.0)
    thp = np.maximum(theta, 0.0)
    thm = -np.minimum(theta, 0.0)
    z = (q > 0).astype(float)
    return qp, qm, qp + qm, thp, thm, z


@dataclass
class HydraulicState:
    """Flows, heads (demand nodes only), valve and friction head losses, shapes (., n_t)."""

    q: np.ndarray
    h: np.ndarray
    eta: np.ndarray
    theta: np.ndarray

    def aux(self):
        return recover_aux(self.q, self.theta)

    @property
    def s(self):
        return np.abs(self.q)

    @property
    def z(self):
        return (self.q > 0).astype(float)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("q", "h", "eta", "theta")}

    @classmethod
    def from_dict(cls, d: dict) -> "HydraulicState":
        return cls(*(np.array(d[k], dtype=float) for k in ("q", "h", "eta", "theta")))


def azp_value(net: NetworkGraph, h) -> float:
    """Average zone pressure of demand-node heads ``h`` (n_n, n_t)."""
    w = azp_weights(net)
    return float(np.sum(w[:, None] * (np.asarray(h) - net.elevations[:, None])))


def hydraulic_residuals(net: NetworkGraph, coeffs: HeadlossCoefficients, st: HydraulicState) -> dict:
    """Max absolute residuals of energy, mass and head-loss equations."""
    energy = mass = 0.0
    for k in range(net.n_t):
        head = _full_heads(net, st.h[:, k], k)
        for l, link in enumerate(net.links):
            r = head[link.start] - head[link.end] - st.theta[l, k] - st.eta[l, k]
            energy = max(energy, abs(r))
        E = net.incidence()
        mass = max(mass, float(np.max(np.abs(E @ st.q[:, k] - net.demand[:, k]))))
    hl = float(np.max(np.abs(st.theta - eval_headloss(coeffs.a[:, None], coeffs.b[:, None], st.q))))
    return {"energy": energy, "mass": mass, "headloss": hl}


def _full_heads(net, h_demand, k):
    return np.concatenate([h_demand, [s.h0[k] for s in net.source_nodes]])


def valve_keys(n_p: int, k: int | None = None):
    if k is None:
        return [("v", j) for j in range(2 * n_p)]
    return [("vt", j, k) for j in range(2 * n_p)]


def add_valve_set(b: LpBuilder, n_p: int, n_v: int, keys) -> None:
    """Valve indicators in ``[0, 1]`` with one direction per link and ``n_v`` in total."""
    for key in keys:
        b.add_var(key, 0.0, 1.0)
    for l in range(n_p):
        b.add_row([(keys[l], 1.0), (keys[n_p + l], 1.0)], "L", 1.0, "valve_set", ("pair", l))
    b.add_row([(key, 1.0) for key in keys], "E", float(n_v), "valve_set", ("count",))


def fix_valves(b: LpBuilder, keys, v_hat) -> None:
    for key, val in zip(keys, v_hat):
        b.fix(key, float(val))


def assemble_hydraulic_rows(b: LpBuilder, net: NetworkGraph, box: BoundsBox, k: int, v_keys,
                            with_aux: bool = True, fixed_z=None) -> None:
    """Variables and linear rows of the hydraulic model at step ``k``.

    Emits energy rows, nodal mass balance, valve big-M rows on head loss and
    flow, and, with ``with_aux``, the split rows for ``q = q+ - q-``,
    ``s = q+ + q-``, ``theta = theta+ - theta-`` with their direction big-Ms.
    All big-M constants come from ``box``.  ``v_keys`` must already be known
    to ``b`` (as variables or fixed values).  ``fixed_z`` turns the direction
    indicators into data.
    """
    n_p = net.n_p
    qmin, qmax = box.q_min[:, k], box.q_max[:, k]
    d = box.derived
    for l, link in enumerate(net.links):
        b.add_var(("q", l, k), qmin[l], qmax[l])
        b.add_var(("eta", l, k), link.eta_min[k], link.eta_max[k])
        b.add_var(("theta", l, k), d["theta_min"][l, k], d["theta_max"][l, k])
    for i, node in enumerate(net.demand_nodes):
        b.add_var(("h", i, k), node.h_min[k], node.h_max[k])
    for i in range(net.n_n, net.n_n + net.n_0):
        b.fix(("h", i, k), net.head_fixed(i, k))

    for l, link in enumerate(net.links):
        b.add_row([(("h", link.start, k), 1.0), (("h", link.end, k), -1.0),
                   (("theta", l, k), -1.0), (("eta", l, k), -1.0)], "E", 0.0, "energy", (l, k))
    for i in range(net.n_n):
        terms = [(("q", l, k), 1.0) for l in net.links_in[i]]
        terms += [(("q", l, k), -1.0) for l in net.links_out[i]]
        b.add_row(terms, "E", float(net.demand[i, k]), "mass", (i, k))
    for l, link in enumerate(net.links):
        vp, vm = v_keys[l], v_keys[n_p + l]
        b.add_row([(("eta", l, k), 1.0), (vp, -float(link.eta_max[k]))], "L", 0.0, "valve_eta", (l, k, "+"))
        b.add_row([(("eta", l, k), -1.0), (vm, float(link.eta_min[k]))], "L", 0.0, "valve_eta", (l, k, "-"))
        b.add_row([(("q", l, k), -1.0), (vp, -qmin[l])], "L", -qmin[l], "valve_q", (l, k, "+"))
        b.add_row([(("q", l, k), 1.0), (vm, qmax[l])], "L", qmax[l], "valve_q", (l, k, "-"))
    if not with_aux:
        return
    for l in range(n_p):
        for name in ("s", "qp", "qm", "thp", "thm"):
            b.add_var((name, l, k), d[name + "_min"][l, k], d[name + "_max"][l, k])
        if fixed_z is None:
            b.add_var(("z", l, k), 0.0, 1.0)
        else:
            b.fix(("z", l, k), float(fixed_z[l]))
    for l in range(n_p):
        q, s, qp, qm = ("q", l, k), ("s", l, k), ("qp", l, k), ("qm", l, k)
        th, thp, thm, z = ("theta", l, k), ("thp", l, k), ("thm", l, k), ("z", l, k)
        b.add_row([(q, 1.0), (qp, -1.0), (qm, 1.0)], "E", 0.0, "split", (l, k, "q"))
        b.add_row([(s, 1.0), (qp, -1.0), (qm, -1.0)], "E", 0.0, "split", (l, k, "s"))
        b.add_row([(th, 1.0), (thp, -1.0), (thm, 1.0)], "E", 0.0, "split", (l, k, "theta"))
        b.add_row([(qp, 1.0), (z, -d["qp_max"][l, k])], "L", 0.0, "split_ub", (l, k, "qp"))
        b.add_row([(qm, 1.0), (z, d["qm_max"][l, k])], "L", d["qm_max"][l, k], "split_ub", (l, k, "qm"))
        b.add_row([(thp, 1.0), (z, -d["thp_max"][l, k])], "L", 0.0, "split_ub", (l, k, "thp"))
        b.add_row([(thm, 1.0), (z, d["thm_max"][l, k])], "L", d["thm_max"][l, k], "split_ub", (l, k, "thm"))


def branch_tangent_history(box: BoundsBox, l: int, k: int, m: int, sign: str):
    """Tangent points inherited from the boxes ``box`` was tightened from."""
    pts = []
    for hq_min, hq_max in box.history:
        lo, hi = hq_min[l, k], hq_max[l, k]
        if sign == "+":
            a_lo, a_hi = max(lo, 0.0), max(hi, 0.0)
        else:
            a_lo, a_hi = max(-hi, 0.0), max(-lo, 0.0)
        pts.extend(tangent_points(a_lo, a_hi, m))
    return pts


def add_headloss_cuts(b: LpBuilder, coeffs: HeadlossCoefficients, box: BoundsBox, k: int, m: int,
                      use_history: bool = True) -> None:
    """Tangent and secant rows on both friction branches of every link at step ``k``."""
    d = box.derived
    for l in range(box.shape[0]):
        a, bb = float(coeffs.a[l]), float(coeffs.b[l])
        for sign, qn, tn in (("+", "qp", "thp"), ("-", "qm", "thm")):
            lo, hi = d[qn + "_min"][l, k], d[qn + "_max"][l, k]
            extra = branch_tangent_history(box, l, k, m, sign) if use_history else ()
            for cut in relax_quadratic_scalar(a, bb, lo, hi, m, extra):
                cq, ct = cut.coefs
                b.add_row([((qn, l, k), cq), ((tn, l, k), ct)], cut.sense, cut.rhs,
                          cut.tag.split("-")[0], (l, k, sign, cut.tag))


def build_step_relaxation(net: NetworkGraph, coeffs: HeadlossCoefficients, box: BoundsBox, k: int,
                          m: int, n_v: int, v_hat=None, objective: str = "azp",
                          use_history: bool = True) -> LpBuilder:
    """Polyhedral hydraulic relaxation of a single step with step-local valve indicators.

    With ``v_hat`` the indicators are fixed; otherwise they range over the
    relaxed valve set.  ``objective='azp'`` charges the step's pressure
    weights on heads; ``None`` leaves the objective empty.
    """
    b = LpBuilder()
    keys = valve_keys(net.n_p, k)
    if v_hat is None:
        add_valve_set(b, net.n_p, n_v, keys)
    else:
        fix_valves(b, keys, v_hat)
    assemble_hydraulic_rows(b, net, box, k, keys, with_aux=True)
    add_headloss_cuts(b, coeffs, box, k, m, use_history)
    if objective == "azp":
        w = azp_weights(net)
        for i in range(net.n_n):
            b.add_objective(("h", i, k), float(w[i]))
    return b


def network_analysis(net: NetworkGraph, coeffs: HeadlossCoefficients, eta=None, tol: float = 1e-11,
                     max_iter: int = 100) -> HydraulicState:
    """Flows and heads for prescribed valve head losses ``eta`` (n_p, n_t).

    Newton iterations on the joint energy/mass system with a backtracking
    line search on the residual norm.  Bounds are not enforced.
    """
    n_p, n_n, n_t = net.n_p, net.n_n, net.n_t
    eta = np.zeros((n_p, n_t)) if eta is None else np.asarray(eta, dtype=float)
    A = np.zeros((n_p, n_n))
    A0 = np.zeros((n_p, net.n_0))
    for l, link in enumerate(net.links):
        for node, sgn in ((link.start, 1.0), (link.end, -1.0)):
            if node < n_n:
                A[l, node] = sgn
            else:
                A0[l, node - n_n] = sgn
    a, bb = coeffs.a, coeffs.b
    q_all = np.zeros((n_p, n_t))
    h_all = np.zeros((n_n, n_t))
    for k in range(n_t):
        h0 = np.array([s.h0[k] for s in net.source_nodes])
        dem = net.demand[:, k]

        def residual(q, h):
            re = A @ h + A0 @ h0 - eval_headloss(a, bb, q) - eta[:, k]
            rm = -A.T @ q - dem
            return np.concatenate([re, rm])

        q = np.full(n_p, 1.0)
        h = np.full(n_n, float(np.mean(h0)))
        res = residual(q, h)
        for _ in range(max_iter):
            nrm = float(np.max(np.abs(res)))
            if nrm <= tol:
                break
            dphi = 2.0 * a * np.abs(q) + bb + 1e-12
            K = np.block([[-np.diag(dphi), A], [-A.T, np.zeros((n_n, n_n))]])
            step = np.linalg.solve(K, -res)
            t = 1.0
            while True:
                qn, hn = q + t * step[:n_p], h + t * step[n_p:]
                rn = residual(qn, hn)
                if np.max(np.abs(rn)) < (1 - 1e-4 * t) * nrm or t < 1e-8:
                    break
                t *= 0.5
            q, h, res = qn, hn, rn
        q_all[:, k] = q
        h_all[:, k] = h
    theta = eval_headloss(a[:, None], bb[:, None], q_all)
    return HydraulicState(q_all, h_all, eta.copy(), theta)


@dataclass
class NlpOutcome:
    state: HydraulicState
    f_azp: float
    iterations: int
    residuals: dict


def _step_nlp(net, coeffs, v_hat, k, base_box, init_box, m, q_ref):
    """Local solve of the fixed-valve program at step ``k``; returns the LP vector and builder."""
    init = build_step_relaxation(net, coeffs, init_box, k, m, sum(v_hat), v_hat=v_hat)
    sol0 = lp_solve(init.build())
    if not sol0.optimal:
        raise HydraulicInfeasible(f"hydraulic relaxation at step {k} is {sol0.status}")

    b = LpBuilder()
    keys = valve_keys(net.n_p, k)
    fix_valves(b, keys, v_hat)
    assemble_hydraulic_rows(b, net, base_box, k, keys, with_aux=False)
    w = azp_weights(net)
    for i in range(net.n_n):
        b.add_objective(("h", i, k), float(w[i]))
    lp = b.build()
    iq = b.columns([("q", l, k) for l in range(net.n_p)])
    it = b.columns([("theta", l, k) for l in range(net.n_p)])
    x0 = np.zeros(lp.n_vars)
    for key, j in b.index.items():
        if key in init.index:
            x0[j] = init.value(sol0.x, key)
    a, bb = coeffs.a, coeffs.b
    mask = np.zeros(lp.n_vars, dtype=bool)
    mask[iq] = True
    n_p = net.n_p
    rows = np.arange(n_p)

    def make_model(eps):
        def residual(x):
            q = x[iq]
            mag = np.sqrt(q * q + eps * eps) if np.any(eps) else np.abs(q)
            return x[it] - a * mag * q - bb * q

        def jacobian(x):
            q = x[iq]
            if np.any(eps):
                r = np.sqrt(q * q + eps * eps)
                dq = a * (r + q * q / r) + bb
            else:
                dq = 2.0 * a * np.abs(q) + bb
            data = np.concatenate([np.ones(n_p), -dq])
            return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([it, iq]))),
                                 shape=(n_p, lp.n_vars))
        return NlpModel(lp, residual, jacobian, mask)

    radius = 0.1 * float(np.max(q_ref))
    eps = 1e-4 * q_ref
    x = x0
    iterations = 0
    while True:
        final = bool(np.all(eps < 1e-8))
        cur = np.zeros_like(eps) if final else eps
        res = slp_solve(make_model(cur), x, radius=radius, feas_tol=1e-10 if final else 1e-8)
        iterations += res.iterations
        x = res.x
        if final:
            break
        eps = eps * 0.1
    if res.residual_norm > RESIDUAL_TOL:
        raise HydraulicInfeasible(f"no hydraulically feasible state found at step {k} "
                                  f"(residual {res.residual_norm:.2e}, {res.status})")
    return b, x, iterations


def solve_fixed_valve_nlp(net: NetworkGraph, coeffs: HeadlossCoefficients, v_hat, m: int = 5,
                          base_box: BoundsBox | None = None,
                          init_box: BoundsBox | None = None) -> NlpOutcome:
    """Local minimiser of average zone pressure with valves fixed to ``v_hat``.

    ``base_box`` supplies the flow bounds of the program itself (network data
    by default); ``init_box`` the box of the start-point relaxation.  The
    program separates over time steps, which are solved in order.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    if v_hat.size != 2 * net.n_p or np.any((v_hat != 0) & (v_hat != 1)):
        raise ValueError("v_hat must be a binary vector of length 2 n_p")
    if np.any(v_hat[:net.n_p] + v_hat[net.n_p:] > 1):
        raise ValueError("at most one valve direction per link")
    base_box = base_box or initial_box(net, coeffs)
    init_box = init_box or base_box
    q_ref = np.array([max(link_q_ref(link), 1e-6) for link in net.links])
    n_p, n_t = net.n_p, net.n_t
    q = np.zeros((n_p, n_t))
    h = np.zeros((net.n_n, n_t))
    eta = np.zeros((n_p, n_t))
    theta = np.zeros((n_p, n_t))
    iterations = 0
    for k in range(n_t):
        b, x, its = _step_nlp(net, coeffs, v_hat, k, base_box, init_box, m, q_ref)
        iterations += its
        for l in range(n_p):
            q[l, k] = b.value(x, ("q", l, k))
            eta[l, k] = b.value(x, ("eta", l, k))
            theta[l, k] = b.value(x, ("theta", l, k))
        for i in range(net.n_n):
            h[i, k] = b.value(x, ("h", i, k))
    state = HydraulicState(q, h, eta, theta)
    res = hydraulic_residuals(net, coeffs, state)
    if max(res.values()) > RESIDUAL_TOL:
        raise HydraulicInfeasible(f"hydraulic residuals too large: {res}")
    return NlpOutcome(state, azp_value(net, h), iterations, res)


def state_within_bounds(net: NetworkGraph, st: HydraulicState, box: BoundsBox | None = None,
                        v_hat=None, tol: float = 1e-8) -> bool:
    """Whether ``st`` respects flow, head and valve head-loss bounds (and ``v_hat`` rules)."""
    qmin = box.q_min if box is not None else np.array([l.q_min for l in net.links])
    qmax = box.q_max if box is not None else np.array([l.q_max for l in net.links])
    if np.any(st.q < qmin - tol) or np.any(st.q > qmax + tol):
        return False
    hmin = np.array([n.h_min for n in net.demand_nodes])
    hmax = np.array([n.h_max for n in net.demand_nodes])
    if np.any(st.h < hmin - tol) or np.any(st.h > hmax + tol):
        return False
    emin = np.array([l.eta_min for l in net.links])
    emax = np.array([l.eta_max for l in net.links])
    if v_hat is not None:
        v = np.asarray(v_hat, dtype=float)
        vp, vm = v[:net.n_p, None], v[net.n_p:, None]
        emax = emax * vp
        emin = emin * vm
        if np.any(st.q < qmin * (1 - vp) - tol) or np.any(st.q > qmax * (1 - vm) + tol):
            return False
    return not (np.any(st.eta < emin - tol) or np.any(st.eta > emax + tol))

