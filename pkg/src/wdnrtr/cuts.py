"""Scalar outer approximations: tangent/secant rows for a convex quadratic branch
and the four McCormick rows of a bilinear product.

Rows are returned as plain coefficient records so that assemblers can map them
onto whatever variable keys they use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScalarCut:
    """``sum(coef_i * var_i) <sense> rhs`` over a fixed variable tuple.

    For quadratic cuts the variables are ``(q, theta)``; for bilinear cuts
    ``(w, s, r)``.
    """

    coefs: tuple
    sense: str
    rhs: float
    tag: str

    def slack(self, values) -> float:
        """Signed satisfaction margin; negative means violated."""
        lhs = float(np.dot(self.coefs, values))
        if self.sense == "G":
            return lhs - self.rhs
        if self.sense == "L":
            return self.rhs - lhs
        return -abs(lhs - self.rhs)


def tangent_points(q_lo: float, q_hi: float, m: int) -> np.ndarray:
    return np.linspace(q_lo, q_hi, m)


def relax_quadratic_scalar(a: float, b: float, q_lo: float, q_hi: float, m: int,
                           extra_points=()) -> list[ScalarCut]:
    """m tangents at equidistant points of ``[q_lo, q_hi]`` and the chord.

    Tangent ``i``: ``theta >= a t_i (2q - t_i) + b q``; chord:
    ``theta <= a (q_lo + q_hi) q + b q - a q_lo q_hi``.  ``extra_points`` adds
    further tangents, which are valid anywhere on the branch.
    """
    if q_lo > q_hi:
        raise ValueError(f"empty interval [{q_lo}, {q_hi}]")
    if q_lo < 0:
        raise ValueError("quadratic branches are relaxed on nonnegative intervals")
    if m < 2:
        raise ValueError("m must be at least 2")
    cuts = []
    points = list(tangent_points(q_lo, q_hi, m)) + [float(t) for t in extra_points]
    for i, t in enumerate(points):
        cuts.append(ScalarCut((-(2.0 * a * t + b), 1.0), "G", -a * t * t, f"tangent-{i + 1}"))
    cuts.append(ScalarCut((-(a * (q_lo + q_hi) + b), 1.0), "L", -a * q_lo * q_hi, "secant"))
    return cuts


def relax_bilinear(s_lo: float, s_hi: float, r_lo: float, r_hi: float) -> list[ScalarCut]:
    """McCormick envelope of ``w = s r`` on ``[s_lo, s_hi] x [r_lo, r_hi]``."""
    if s_lo > s_hi or r_lo > r_hi:
        raise ValueError("empty box")
    return [
        ScalarCut((1.0, -r_lo, -s_lo), "G", -s_lo * r_lo, "rlt-1"),
        ScalarCut((1.0, -r_hi, -s_hi), "G", -s_hi * r_hi, "rlt-2"),
        ScalarCut((1.0, -r_lo, -s_hi), "L", -s_hi * r_lo, "rlt-3"),
        ScalarCut((1.0, -r_hi, -s_lo), "L", -s_lo * r_hi, "rlt-4"),
    ]
