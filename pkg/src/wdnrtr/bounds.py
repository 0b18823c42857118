"""Flow-bound boxes and their interval images on the auxiliary hydraulic variables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _phi(a, b, t):
    """Friction curve ``a t^2 + b t`` on a nonnegative argument."""
    return a * t * t + b * t


def propagate_u_bounds(q_min, q_max, coeffs) -> dict[str, np.ndarray]:
    """Interval images of ``[q_min, q_max]`` on the split flow, speed and head-loss parts.

    ``coeffs`` provides per-link arrays ``a`` and ``b``; flow arrays are either
    per link or (link, time).  Returns a dict with ``*_min``/``*_max`` entries for
    ``qp, qm, s, thp, thm, theta``.
    """
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if np.any(q_min > q_max):
        raise ValueError("q_min exceeds q_max")
    a = np.asarray(coeffs.a, dtype=float)
    b = np.asarray(coeffs.b, dtype=float)
    if q_min.ndim == 2:
        a = a[:, None]
        b = b[:, None]
    zero = np.zeros_like(q_min)
    qp_min, qp_max = np.maximum(q_min, 0.0), np.maximum(q_max, 0.0)
    qm_min, qm_max = np.maximum(-q_max, 0.0), np.maximum(-q_min, 0.0)
    s_min = np.where(q_min > 0, q_min, np.where(q_max < 0, -q_max, zero))
    s_max = np.maximum(np.abs(q_min), np.abs(q_max))
    out = {
        "qp_min": qp_min, "qp_max": qp_max,
        "qm_min": qm_min, "qm_max": qm_max,
        "s_min": s_min, "s_max": s_max,
        "thp_min": _phi(a, b, qp_min), "thp_max": _phi(a, b, qp_max),
        "thm_min": _phi(a, b, qm_min), "thm_max": _phi(a, b, qm_max),
    }
    # theta = a|q|q + bq is increasing, so its range is the image of the endpoints
    out["theta_min"] = out["thp_min"] - out["thm_max"]
    out["theta_max"] = out["thp_max"] - out["thm_min"]
    return out


@dataclass(frozen=True)
class BoundsBox:
    """Per-(link, time) flow bounds plus everything derived from them.

    ``history`` keeps the flow boxes this one was tightened from.  Tangent
    cuts built on earlier intervals stay valid for the convex head-loss
    branches, so relaxations may reuse them.
    """

    q_min: np.ndarray
    q_max: np.ndarray
    derived: dict
    history: tuple = ()

    @classmethod
    def from_flows(cls, q_min, q_max, coeffs, history=()) -> "BoundsBox":
        q_min = np.array(q_min, dtype=float)
        q_max = np.array(q_max, dtype=float)
        if q_min.shape != q_max.shape or q_min.ndim != 2:
            raise ValueError("flow bounds must be (n_p, n_t) arrays of equal shape")
        derived = propagate_u_bounds(q_min, q_max, coeffs)
        for arr in (q_min, q_max, *derived.values()):
            arr.setflags(write=False)
        return cls(q_min, q_max, derived, tuple(history))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.derived[name]

    @property
    def shape(self):
        return self.q_min.shape

    def tightened(self, q_min, q_max, coeffs) -> "BoundsBox":
        """New box on ``[q_min, q_max]`` remembering this one in its history."""
        return BoundsBox.from_flows(q_min, q_max, coeffs, self.history + ((self.q_min, self.q_max),))

    def contains(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))


def initial_box(net, coeffs) -> BoundsBox:
    """Box built from the flow bounds stored on the network links."""
    q_min = np.array([link.q_min for link in net.links])
    q_max = np.array([link.q_max for link in net.links])
    return BoundsBox.from_flows(q_min, q_max, coeffs)
