"""Chlorine transport: implicit upwind pipe discretisation, nodal mixing with
boosters, the forward simulator and the booster-placement MILP.

Segment ``j = 0`` of a link always sits at the upstream end of the current
flow direction (node ``i1`` when ``z = 1``, ``i2`` otherwise), ``j = J`` at the
downstream end.  Keys used in LP builders: ``('c', i, k)``, ``('r', j, l, k)``,
``('w', j, l, k)``, ``('rho', l, k)``, ``('xi', i, k)``, ``('mu', i, k)``,
``('vb', i)``; ``('r', j, l, -1)`` holds the initial pipe state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bounds import BoundsBox
from .network import NetworkGraph, atd_weights
from .solvers import LpBuilder, MilpProblem

WARMUP_STEPS = 24
WARMUP_SOURCE_C = 0.5


class QualitySingular(RuntimeError):
    """The per-step mixing system has no unique solution."""


def pde_coefficients(link, dt: float) -> tuple[float, float]:
    """``(gamma, dx)`` of the upwind scheme; ``gamma s`` is the Courant number for flow ``s``."""
    dx = link.length / link.segments
    gamma = 4.0 * dt / (1e3 * math.pi * link.diameter ** 2 * dx)
    return gamma, dx


@dataclass
class QualityState:
    """Concentrations over the horizon.

    ``c`` is (n_n + n_0, n_t); ``r[l]`` is (J_l + 1, n_t + 1) with column 0 the
    initial pipe state; ``w[l]`` is (J_l + 1, n_t); ``rho``, ``xi`` and ``mu``
    are per link or demand node and step.
    """

    c: np.ndarray
    r: list
    w: list
    rho: np.ndarray
    xi: np.ndarray
    mu: np.ndarray

    def source_c(self, net: NetworkGraph) -> np.ndarray:
        return self.c[net.n_n:]


def initial_pipe_state(net: NetworkGraph) -> list:
    return [np.full(link.segments + 1, net.c0(link.end)) for link in net.links]


def _upstream(link, z):
    return link.start if z > 0.5 else link.end


def simulate_quality(net: NetworkGraph, hyd, source_c, xi=None, r_init=None,
                     c_target=None) -> QualityState:
    """March the coupled pipe/node system forward one step at a time.

    ``hyd`` provides flows ``q`` (n_p, n_t); speeds and directions follow as
    ``s = |q|`` and ``z = [q > 0]``.  ``source_c`` is a scalar or (n_0, n_t)
    array, ``xi`` an optional (n_n, n_t) array of booster injections.
    """
    n_n, n_0, n_p, n_t = net.n_n, net.n_0, net.n_p, net.n_t
    q = np.asarray(hyd.q, dtype=float)
    s_all = np.abs(q)
    z_all = (q > 0).astype(float)
    src = np.broadcast_to(np.asarray(source_c, dtype=float), (n_0, n_t)) if np.ndim(source_c) < 2 \
        else np.asarray(source_c, dtype=float)
    xi = np.zeros((n_n, n_t)) if xi is None else np.asarray(xi, dtype=float)
    prev = [np.array(v, dtype=float) for v in (r_init or initial_pipe_state(net))]
    offs = np.cumsum([0] + [link.segments + 1 for link in net.links])
    n_r = int(offs[-1])
    coef = [pde_coefficients(link, net.dt) for link in net.links]

    c = np.zeros((n_n + n_0, n_t))
    r_hist = [np.zeros((link.segments + 1, n_t + 1)) for link in net.links]
    for l in range(n_p):
        r_hist[l][:, 0] = prev[l]
    for k in range(n_t):
        s, z = s_all[:, k], z_all[:, k]
        throughput = net.demand[:, k].astype(float).copy()
        for l, link in enumerate(net.links):
            up = _upstream(link, z[l])
            if up < n_n:
                throughput[up] += s[l]
        bad = np.flatnonzero(throughput <= 0)
        if bad.size:
            raise QualitySingular(f"node {net.node_id(int(bad[0]))!r} has no demand and no outflow "
                                  f"at step {k}; its concentration is undetermined")
        rows, cols, vals = [], [], []
        rhs = np.zeros(n_r + n_n)

        def put(i, j, v):
            rows.append(i)
            cols.append(j)
            vals.append(v)

        for l, link in enumerate(net.links):
            base = offs[l]
            up = _upstream(link, z[l])
            put(base, base, 1.0)
            if up < n_n:
                put(base, n_r + up, -1.0)
            else:
                rhs[base] = src[up - n_n, k]
            gamma = coef[l][0]
            for j in range(1, link.segments + 1):
                put(base + j, base + j, 1.0 + link.decay * net.dt + gamma * s[l])
                put(base + j, base + j - 1, -gamma * s[l])
                rhs[base + j] = prev[l][j]
        for i in range(n_n):
            row = n_r + i
            put(row, row, float(net.demand[i, k]))
            for l in net.links_in[i]:
                J = net.links[l].segments
                # w0 - rho, with rho = z (w0 + wJ)
                put(row, offs[l], s[l] * (1.0 - z[l]))
                put(row, offs[l] + J, -s[l] * z[l])
            for l in net.links_out[i]:
                J = net.links[l].segments
                # rho - wJ
                put(row, offs[l], s[l] * z[l])
                put(row, offs[l] + J, s[l] * (z[l] - 1.0))
            rhs[row] = xi[i, k]
        M = sp.csr_matrix((vals, (rows, cols)), shape=(n_r + n_n, n_r + n_n))
        sol = spla.spsolve(M.tocsc(), rhs)
        if not np.all(np.isfinite(sol)):
            raise QualitySingular(f"mixing system singular at step {k}")
        for l in range(n_p):
            prev[l] = sol[offs[l]:offs[l + 1]].copy()
            r_hist[l][:, k + 1] = prev[l]
        c[:n_n, k] = sol[n_r:]
        c[n_n:, k] = src[:, k]

    w = [s_all[l][None, :] * r_hist[l][:, 1:] for l in range(n_p)]
    rho = np.array([z_all[l] * (w[l][0] + w[l][-1]) for l in range(n_p)]).reshape(n_p, n_t)
    target = net.c_target if c_target is None else np.asarray(c_target, dtype=float)
    mu = np.abs(c[:n_n] - target[:, None])
    return QualityState(c, r_hist, w, rho, xi.copy(), mu)


class _CyclicHydraulics:
    def __init__(self, q, steps):
        idx = np.arange(steps) % q.shape[1]
        self.q = q[:, idx]


def warmup_initial_concentrations(net: NetworkGraph, hyd, steps: int = WARMUP_STEPS,
                                  source_c: float = WARMUP_SOURCE_C) -> np.ndarray:
    """Nodal concentrations after ``steps`` steps from clean pipes with fixed inlet levels.

    The hydraulic schedule is repeated cyclically when it is shorter than
    ``steps``.  Returns one value per node, demand nodes first.
    """
    from dataclasses import replace

    q = np.asarray(hyd.q, dtype=float)
    cyc = _CyclicHydraulics(q, steps)
    idx = np.arange(steps) % net.n_t
    long = replace(net, n_t=steps, demand_nodes=tuple(
        replace(n, demand=n.demand[idx]) for n in net.demand_nodes))
    zero = [np.zeros(link.segments + 1) for link in net.links]
    st = simulate_quality(long, cyc, source_c, r_init=zero)
    return st.c[:, -1].copy()


def compute_atd(net: NetworkGraph, c, c_target=None) -> float:
    """Demand-weighted mean absolute deviation of demand-node concentrations from target."""
    c = np.asarray(c, dtype=float)[:net.n_n]
    target = net.c_target if c_target is None else np.asarray(c_target, dtype=float)
    return float(np.sum(atd_weights(net) * np.abs(c - target[:, None])))


@dataclass(frozen=True)
class QualityBounds:
    r_max: np.ndarray     # per link
    w_max: np.ndarray     # (n_p, n_t), shared by all segments of a link
    rho_max: np.ndarray   # (n_p, n_t)
    xi_max: np.ndarray    # (n_n, n_t)
    mu_max: np.ndarray    # per demand node


def quality_bounds(net: NetworkGraph, box: BoundsBox) -> QualityBounds:
    """Valid bounds on the quality variables implied by concentration caps and the flow box.

    Each segment value is a convex combination of its predecessor in time,
    its upstream neighbour and the upstream node, so ``r`` never exceeds the
    largest cap of the link's end nodes or the link's initial value.
    """
    s_max = box["s_max"]
    r_max = np.array([max(net.c_max(link.start), net.c_max(link.end), net.c0(link.end))
                      for link in net.links])
    w_max = s_max * r_max[:, None]
    rho_max = 2.0 * w_max
    xi_max = np.zeros((net.n_n, net.n_t))
    for i in range(net.n_n):
        incident = list(net.links_in[i]) + list(net.links_out[i])
        xi_max[i] = net.demand_nodes[i].c_max * (net.demand[i] + s_max[incident].sum(axis=0))
    target = net.c_target
    mu_max = np.array([max(target[i], net.demand_nodes[i].c_max - target[i]) for i in range(net.n_n)])
    return QualityBounds(r_max, w_max, rho_max, xi_max, mu_max)


def add_booster_set(b: LpBuilder, n_n: int, n_b: int, fixed=None) -> None:
    if fixed is None:
        for i in range(n_n):
            b.add_var(("vb", i), 0.0, 1.0)
    else:
        for i in range(n_n):
            b.fix(("vb", i), float(fixed[i]))
    b.add_row([(("vb", i), 1.0) for i in range(n_n)], "E", float(n_b), "booster_count", ())


def add_quality_rows(b: LpBuilder, net: NetworkGraph, qb: QualityBounds, k: int) -> None:
    """Variables and linear rows of the quality model at step ``k``.

    Direction indicators ``('z', l, k)`` and booster indicators ``('vb', i)``
    must already be known to ``b``.  The bilinear link ``w = s r`` is not
    emitted here.
    """
    n_n = net.n_n
    w_atd = atd_weights(net)
    target = net.c_target
    for i in range(n_n + net.n_0):
        b.add_var(("c", i, k), 0.0, net.c_max(i))
    for l, link in enumerate(net.links):
        for j in range(link.segments + 1):
            b.add_var(("r", j, l, k), 0.0, qb.r_max[l])
            b.add_var(("w", j, l, k), 0.0, qb.w_max[l, k])
            if k == 0:
                b.fix(("r", j, l, -1), net.c0(link.end))
        b.add_var(("rho", l, k), 0.0, qb.rho_max[l, k])
    for i in range(n_n):
        b.add_var(("xi", i, k), 0.0, qb.xi_max[i, k])
        b.add_var(("mu", i, k), 0.0, qb.mu_max[i], obj=float(w_atd[i, k]))

    for i in range(n_n):
        c, mu = ("c", i, k), ("mu", i, k)
        b.add_row([(c, 1.0), (mu, -1.0)], "L", float(target[i]), "atd_aux", (i, k, "+"))
        b.add_row([(c, -1.0), (mu, -1.0)], "L", -float(target[i]), "atd_aux", (i, k, "-"))
    for l, link in enumerate(net.links):
        gamma, _ = pde_coefficients(link, net.dt)
        for j in range(1, link.segments + 1):
            b.add_row([(("r", j, l, k), 1.0 + link.decay * net.dt), (("r", j, l, k - 1), -1.0),
                       (("w", j, l, k), gamma), (("w", j - 1, l, k), -gamma)], "E", 0.0, "pde", (j, l, k))
    for l, link in enumerate(net.links):
        r0, z = ("r", 0, l, k), ("z", l, k)
        c1, c2 = ("c", link.start, k), ("c", link.end, k)
        m1, m2 = net.c_max(link.start), net.c_max(link.end)
        b.add_row([(r0, 1.0), (c1, -1.0), (z, m2)], "L", m2, "boundary", (l, k, "a"))
        b.add_row([(r0, -1.0), (c1, 1.0), (z, m1)], "L", m1, "boundary", (l, k, "b"))
        b.add_row([(r0, 1.0), (c2, -1.0), (z, -m1)], "L", 0.0, "boundary", (l, k, "c"))
        b.add_row([(r0, -1.0), (c2, 1.0), (z, -m2)], "L", 0.0, "boundary", (l, k, "d"))
    for i in range(n_n):
        terms = [(("c", i, k), float(net.demand[i, k])), (("xi", i, k), -1.0)]
        for l in net.links_in[i]:
            terms += [(("w", 0, l, k), 1.0), (("rho", l, k), -1.0)]
        for l in net.links_out[i]:
            J = net.links[l].segments
            terms += [(("rho", l, k), 1.0), (("w", J, l, k), -1.0)]
        b.add_row(terms, "E", 0.0, "mixing", (i, k))
        b.add_row([(("xi", i, k), 1.0), (("vb", i), -qb.xi_max[i, k])], "L", 0.0, "booster_gate", (i, k))
    for l, link in enumerate(net.links):
        J = link.segments
        rho, z, w0, wJ = ("rho", l, k), ("z", l, k), ("w", 0, l, k), ("w", J, l, k)
        rm = qb.rho_max[l, k]
        b.add_row([(rho, 1.0), (z, -rm)], "L", 0.0, "rho_gate", (l, k, "a"))
        b.add_row([(w0, 1.0), (wJ, 1.0), (rho, -1.0), (z, rm)], "L", rm, "rho_gate", (l, k, "b"))
        b.add_row([(w0, -1.0), (wJ, -1.0), (rho, 1.0)], "L", 0.0, "rho_gate", (l, k, "c"))


def add_fixed_bilinear_rows(b: LpBuilder, net: NetworkGraph, s, k: int) -> None:
    """``w = s r`` with the speed ``s`` (per link) treated as data."""
    for l, link in enumerate(net.links):
        for j in range(link.segments + 1):
            b.add_row([(("w", j, l, k), 1.0), (("r", j, l, k), -float(s[l]))], "E", 0.0,
                      "bilinear", (j, l, k))


@dataclass
class QualityMilp:
    problem: MilpProblem
    builder: LpBuilder


def assemble_quality_milp(net: NetworkGraph, q, n_b: int) -> QualityMilp:
    """Booster placement and source scheduling for a fixed hydraulic state with flows ``q``.

    Speeds and directions are data, so ``w = s r`` becomes linear and the
    only binaries are the ``n_n`` booster indicators.
    """
    q = np.asarray(q, dtype=float)
    if not 0 <= n_b <= net.n_n:
        raise ValueError(f"n_b={n_b} outside [0, {net.n_n}]")
    z = (q > 0).astype(float)
    s = np.abs(q)
    box = BoundsBox.from_flows(q, q, _UnitCoeffs(net.n_p))
    qb = quality_bounds(net, box)
    b = LpBuilder()
    add_booster_set(b, net.n_n, n_b)
    for k in range(net.n_t):
        for l in range(net.n_p):
            b.fix(("z", l, k), z[l, k])
        add_quality_rows(b, net, qb, k)
        add_fixed_bilinear_rows(b, net, s[:, k], k)
    lp = b.build()
    return QualityMilp(MilpProblem(lp, b.columns([("vb", i) for i in range(net.n_n)])), b)


class _UnitCoeffs:
    """Placeholder friction curve; only the flow-side images of a box are used here."""

    def __init__(self, n_p):
        self.a = np.ones(n_p)
        self.b = np.zeros(n_p)


def quality_state_from_solution(net: NetworkGraph, b: LpBuilder, x) -> tuple[QualityState, np.ndarray]:
    """Unpack a quality solution vector into a :class:`QualityState` and booster placement."""
    n_n, n_t = net.n_n, net.n_t
    val = lambda key: b.value(x, key)
    c = np.array([[val(("c", i, k)) for k in range(n_t)] for i in range(n_n + net.n_0)])
    r, w = [], []
    for l, link in enumerate(net.links):
        J = link.segments
        rl = np.zeros((J + 1, n_t + 1))
        rl[:, 0] = net.c0(link.end)
        rl[:, 1:] = [[val(("r", j, l, k)) for k in range(n_t)] for j in range(J + 1)]
        r.append(rl)
        w.append(np.array([[val(("w", j, l, k)) for k in range(n_t)] for j in range(J + 1)]))
    rho = np.array([[val(("rho", l, k)) for k in range(n_t)] for l in range(net.n_p)])
    xi = np.array([[val(("xi", i, k)) for k in range(n_t)] for i in range(n_n)])
    mu = np.abs(c[:n_n] - net.c_target[:, None])
    vb = np.array([round(val(("vb", i))) for i in range(n_n)], dtype=int)
    return QualityState(c, r, w, rho, xi, mu), vb


def write_trajectory_csv(net: NetworkGraph, st: QualityState, path) -> None:
    """Concentration trajectories, one row per (entity, segment, time)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["time", "entity_kind", "entity_id", "segment", "value"])
        for i in range(net.n_n + net.n_0):
            kind = "source" if net.is_source(i) else "node"
            for k in range(net.n_t):
                out.writerow([repr((k + 1) * net.dt), kind, net.node_id(i), "", repr(float(st.c[i, k]))])
        for l, link in enumerate(net.links):
            for j in range(link.segments + 1):
                for k in range(net.n_t + 1):
                    out.writerow([repr(k * net.dt), "segment", link.id, j, repr(float(st.r[l][j, k]))])
        for i in range(net.n_n):
            for k in range(net.n_t):
                out.writerow([repr((k + 1) * net.dt), "booster", net.node_id(i), "", repr(float(st.xi[i, k]))])
