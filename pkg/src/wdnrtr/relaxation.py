"""Continuous polyhedral relaxation of the joint valve/booster problem.

The quadratic friction branches are outer-approximated by tangents and a
chord per (link, step, direction); every bilinear ``w = s r`` is replaced by
its McCormick envelope; all binaries range over ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import BoundsBox
from .cuts import relax_bilinear
from .hydraulics import (HeadlossCoefficients, add_headloss_cuts, add_valve_set,
                         assemble_hydraulic_rows, valve_keys)
from .network import NetworkGraph, azp_weights
from .quality import QualityBounds, add_booster_set, add_quality_rows, quality_bounds
from .solvers import LpBuilder, LpProblem, LpSolution, lp_solve

DEFAULT_M = 5


def add_azp_objective(b: LpBuilder, net: NetworkGraph) -> None:
    w = azp_weights(net)
    for k in range(net.n_t):
        for i in range(net.n_n):
            b.add_objective(("h", i, k), float(w[i]))
    b.c0 -= float(net.n_t * np.dot(w, net.elevations))


def add_bilinear_cuts(b: LpBuilder, net: NetworkGraph, box: BoundsBox, qb: QualityBounds, k: int) -> None:
    s_lo, s_hi = box["s_min"][:, k], box["s_max"][:, k]
    for l, link in enumerate(net.links):
        for j in range(link.segments + 1):
            keys = (("w", j, l, k), ("s", l, k), ("r", j, l, k))
            for cut in relax_bilinear(s_lo[l], s_hi[l], 0.0, qb.r_max[l]):
                b.add_row(list(zip(keys, cut.coefs)), cut.sense, cut.rhs, "rlt", (j, l, k, cut.tag))


def assemble_linear_model(net: NetworkGraph, box: BoundsBox, n_v: int, n_b: int) -> LpBuilder:
    """Every linear row and bound of the full problem, binaries relaxed to ``[0, 1]``."""
    b = LpBuilder()
    keys = valve_keys(net.n_p)
    add_valve_set(b, net.n_p, n_v, keys)
    add_booster_set(b, net.n_n, n_b)
    qb = quality_bounds(net, box)
    for k in range(net.n_t):
        assemble_hydraulic_rows(b, net, box, k, keys, with_aux=True)
        add_quality_rows(b, net, qb, k)
    add_azp_objective(b, net)
    return b


@dataclass
class Relaxation:
    lp: LpProblem
    builder: LpBuilder

    def valves(self, x) -> np.ndarray:
        n = sum(1 for key in self.builder.index if key[0] == "v")
        return np.array([self.builder.value(x, ("v", j)) for j in range(n)])

    def boosters(self, x) -> np.ndarray:
        n = sum(1 for key in self.builder.index if key[0] == "vb")
        return np.array([self.builder.value(x, ("vb", i)) for i in range(n)])


def assemble_relaxation(net: NetworkGraph, coeffs: HeadlossCoefficients, box: BoundsBox,
                        m: int = DEFAULT_M, n_v: int = 0, n_b: int = 0,
                        use_history: bool = True) -> Relaxation:
    """LP relaxation on ``box``: linear rows verbatim plus tangent, chord and McCormick rows.

    With ``use_history`` the tangent points of the boxes ``box`` descends
    from are kept as well.
    """
    if np.any(box.q_min > box.q_max):
        raise ValueError("inconsistent flow bounds")
    b = assemble_linear_model(net, box, n_v, n_b)
    qb = quality_bounds(net, box)
    for k in range(net.n_t):
        add_headloss_cuts(b, coeffs, box, k, m, use_history)
        add_bilinear_cuts(b, net, box, qb, k)
    return Relaxation(b.build(), b)


def linear_row_count(net: NetworkGraph) -> int:
    """Rows of the linear part of the full problem (variable bounds excluded)."""
    seg = sum(link.segments for link in net.links)
    return net.n_t * (5 * net.n_n + 19 * net.n_p + seg) + net.n_p + 2


def cut_row_count(net: NetworkGraph, m: int) -> int:
    jbar = sum(1 + link.segments for link in net.links)
    return (m + 1) * 2 * net.n_p * net.n_t + 4 * jbar * net.n_t


def solve_relaxation(rel: Relaxation, backend: str = "highs") -> LpSolution:
    return lp_solve(rel.lp, backend=backend)
