"""Sparse LP container, incremental builder and the ``lp_solve`` front end."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

_SENSES = ("L", "E", "G")
_SENSE_TEXT = {"L": "<=", "E": "=", "G": ">="}
_TEXT_SENSE = {v: k for k, v in _SENSE_TEXT.items()}


@dataclass
class LpProblem:
    """``min c @ x + c0`` subject to ``A x (sense) rhs`` and ``lb <= x <= ub``.

    ``sense`` holds one of ``'L'`` (<=), ``'E'`` (=), ``'G'`` (>=) per row.
    """

    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0
    var_names: list | None = None
    row_tags: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.sense = np.asarray(self.sense, dtype="<U1")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("objective/bounds do not match the column count")
        if self.sense.shape != (m,) or self.rhs.shape != (m,):
            raise ValueError("sense/rhs do not match the row count")
        bad = set(self.sense.tolist()) - set(_SENSES)
        if bad:
            raise ValueError(f"unknown row sense(s) {sorted(bad)}")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def with_objective(self, c, c0: float = 0.0) -> "LpProblem":
        return dataclasses.replace(self, c=np.asarray(c, dtype=float), c0=c0)

    def with_bounds(self, lb, ub) -> "LpProblem":
        return dataclasses.replace(self, lb=np.asarray(lb, float), ub=np.asarray(ub, float))

    def row_violations(self, x) -> np.ndarray:
        """Nonnegative violation of every row at ``x``."""
        ax = self.A @ x
        viol = np.zeros(self.n_rows)
        L = self.sense == "L"
        G = self.sense == "G"
        E = self.sense == "E"
        viol[L] = np.maximum(ax[L] - self.rhs[L], 0.0)
        viol[G] = np.maximum(self.rhs[G] - ax[G], 0.0)
        viol[E] = np.abs(ax[E] - self.rhs[E])
        return viol

    def bound_violations(self, x) -> np.ndarray:
        return np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)


@dataclass
class LpSolution:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class LpBuilder:
    """Accumulate variables and rows addressed by hashable keys.

    Keys registered with :meth:`fix` behave as constants: any row term that
    references them is folded into the right-hand side.  This lets the same
    row generator serve an LP where, say, flow directions are decisions and a
    MILP where they are data.
    """

    def __init__(self):
        self.index: dict[Hashable, int] = {}
        self.fixed: dict[Hashable, float] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._c: list[float] = []
        self._names: list[Hashable] = []
        self._rows_i: list[int] = []
        self._rows_j: list[int] = []
        self._rows_v: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self.row_tags: list[str] = []
        self.row_origin: list = []
        self.c0 = 0.0

    @property
    def n_vars(self) -> int:
        return len(self._lb)

    @property
    def n_rows(self) -> int:
        return len(self._sense)

    def add_var(self, key: Hashable, lb: float = -math.inf, ub: float = math.inf, obj: float = 0.0) -> int:
        if key in self.index or key in self.fixed:
            raise KeyError(f"duplicate variable {key!r}")
        j = len(self._lb)
        self.index[key] = j
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._c.append(float(obj))
        self._names.append(key)
        return j

    def fix(self, key: Hashable, value: float) -> None:
        if key in self.index:
            raise KeyError(f"{key!r} is already a variable")
        self.fixed[key] = float(value)

    def has(self, key: Hashable) -> bool:
        return key in self.index or key in self.fixed

    def set_bounds(self, key: Hashable, lb: float, ub: float) -> None:
        j = self.index[key]
        self._lb[j] = float(lb)
        self._ub[j] = float(ub)

    def add_objective(self, key: Hashable, coef: float) -> None:
        if key in self.fixed:
            self.c0 += coef * self.fixed[key]
        else:
            self._c[self.index[key]] += coef

    def add_row(self, terms: Iterable[tuple[Hashable, float]], sense: str, rhs: float,
                tag: str = "", origin=None) -> int:
        if sense not in _SENSES:
            raise ValueError(f"bad sense {sense!r}")
        acc: dict[int, float] = {}
        rhs = float(rhs)
        for key, coef in terms:
            if coef == 0.0:
                continue
            j = self.index.get(key)
            if j is None:
                try:
                    rhs -= coef * self.fixed[key]
                except KeyError:
                    raise KeyError(f"row {tag!r} references unknown key {key!r}") from None
                continue
            acc[j] = acc.get(j, 0.0) + coef
        r = len(self._sense)
        for j, v in acc.items():
            self._rows_i.append(r)
            self._rows_j.append(j)
            self._rows_v.append(v)
        self._sense.append(sense)
        self._rhs.append(rhs)
        self.row_tags.append(tag)
        self.row_origin.append(origin)
        return r

    def build(self) -> LpProblem:
        A = sp.csr_matrix((self._rows_v, (self._rows_i, self._rows_j)),
                          shape=(self.n_rows, self.n_vars))
        return LpProblem(c=np.array(self._c), A=A, sense=np.array(self._sense, dtype="<U1"),
                         rhs=np.array(self._rhs), lb=np.array(self._lb), ub=np.array(self._ub),
                         c0=self.c0, var_names=list(self._names), row_tags=list(self.row_tags))

    def value(self, x, key: Hashable) -> float:
        if key in self.fixed:
            return self.fixed[key]
        return float(x[self.index[key]])

    def columns(self, keys) -> np.ndarray:
        return np.array([self.index[k] for k in keys], dtype=int)


def lp_solve(p: LpProblem, backend: str = "highs", feasibility_tol: float = 1e-9,
             max_iter: int | None = None) -> LpSolution:
    """Solve an LP with the chosen backend.

    ``backend='highs'`` dispatches to HiGHS through :func:`scipy.optimize.linprog`;
    ``backend='simplex'`` uses the in-package bounded-variable revised simplex.
    Both report duals as row sensitivities ``d objective / d rhs``.
    """
    if np.any(p.lb > p.ub):
        return LpSolution(INFEASIBLE, message="empty variable box")
    if backend == "simplex":
        from .simplex import simplex_solve
        return simplex_solve(p, max_iter=max_iter)
    if backend != "highs":
        raise ValueError(f"unknown LP backend {backend!r}")
    return _solve_highs(p, feasibility_tol, max_iter)


def _solve_highs(p: LpProblem, tol: float, max_iter: int | None) -> LpSolution:
    A = p.A
    L = np.flatnonzero(p.sense == "L")
    G = np.flatnonzero(p.sense == "G")
    E = np.flatnonzero(p.sense == "E")
    A_ub = sp.vstack([A[L], -A[G]]).tocsr() if len(L) + len(G) else None
    b_ub = np.concatenate([p.rhs[L], -p.rhs[G]]) if A_ub is not None else None
    A_eq = A[E] if len(E) else None
    b_eq = p.rhs[E] if len(E) else None
    options = {"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol}
    if max_iter is not None:
        options["maxiter"] = max_iter
    bounds = np.column_stack([p.lb, p.ub])
    res = linprog(p.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs", options=options)
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpSolution(INFEASIBLE, iterations=nit, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, iterations=nit, message=res.message)
    if res.status != 0:
        return LpSolution(ITERATION_LIMIT, iterations=nit, message=res.message)
    y = np.zeros(p.n_rows)
    if A_ub is not None:
        m_ub = np.asarray(res.ineqlin.marginals)
        y[L] = m_ub[: len(L)]
        y[G] = -m_ub[len(L):]
    if A_eq is not None:
        y[E] = np.asarray(res.eqlin.marginals)
    x = np.asarray(res.x, dtype=float)
    d = p.c - p.A.T @ y
    return LpSolution(OPTIMAL, float(p.c @ x + p.c0), x, y, d, nit, res.message)


def dual_objective(p: LpProblem, sol: LpSolution) -> float:
    """Lagrangian dual value from row duals and reduced costs at finite bounds."""
    y, d = sol.duals, sol.reduced_costs
    val = float(p.rhs @ y) + p.c0
    # reduced costs at roundoff level carry no bound information
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(p.c), initial=0.0)))
    pos = d > tiny
    neg = d < -tiny
    with np.errstate(invalid="ignore"):
        val += float(np.sum(d[pos] * p.lb[pos])) + float(np.sum(d[neg] * p.ub[neg]))
    return val


def duality_gap(p: LpProblem, sol: LpSolution) -> float:
    """Scaled ``|primal - dual|`` objective gap of an optimal solution."""
    dv = dual_objective(p, sol)
    return abs(sol.objective - dv) / max(1.0, abs(sol.objective))


def dump_lp(p: LpProblem, path) -> None:
    """Write ``p`` in a line-oriented text format.

    Layout::

        obj <c0> {index:coef,...}
        var <index> <lb> <ub>
        <sense> <rhs> {index:coef,...}

    with sense one of ``<=``, ``=``, ``>=``.
    """
    def fmt(row: dict) -> str:
        return "{" + ",".join(f"{j}:{v!r}" for j, v in row.items()) + "}"

    csr = p.A.tocsr()
    lines = [f"obj {float(p.c0)!r} " + fmt({j: float(v) for j, v in enumerate(p.c) if v != 0.0})]
    for j in range(p.n_vars):
        lines.append(f"var {j} {float(p.lb[j])!r} {float(p.ub[j])!r}")
    for r in range(p.n_rows):
        lo, hi = csr.indptr[r], csr.indptr[r + 1]
        row = {int(j): float(v) for j, v in zip(csr.indices[lo:hi], csr.data[lo:hi])}
        lines.append(f"{_SENSE_TEXT[p.sense[r]]} {float(p.rhs[r])!r} {fmt(row)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_row(text: str) -> dict[int, float]:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"malformed coefficient map {text!r}")
    body = text[1:-1].strip()
    out = {}
    if body:
        for item in body.split(","):
            j, v = item.split(":")
            out[int(j)] = float(v)
    return out


def load_lp(path) -> LpProblem:
    c0, cmap = 0.0, {}
    lbs, ubs = {}, {}
    rows, senses, rhs = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, rest = line.split(" ", 1)
            try:
                if head == "obj":
                    c0_txt, row_txt = rest.split(" ", 1)
                    c0, cmap = float(c0_txt), _parse_row(row_txt)
                elif head == "var":
                    j, lo, hi = rest.split()
                    lbs[int(j)], ubs[int(j)] = float(lo), float(hi)
                else:
                    r_txt, row_txt = rest.split(" ", 1)
                    senses.append(_TEXT_SENSE[head])
                    rhs.append(float(r_txt))
                    rows.append(_parse_row(row_txt))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    n = len(lbs)
    c = np.zeros(n)
    for j, v in cmap.items():
        c[j] = v
    ii, jj, vv = [], [], []
    for r, row in enumerate(rows):
        for j, v in row.items():
            ii.append(r)
            jj.append(j)
            vv.append(v)
    A = sp.csr_matrix((vv, (ii, jj)), shape=(len(rows), n))
    return LpProblem(c, A, np.array(senses, dtype="<U1"), np.array(rhs),
                     np.array([lbs[j] for j in range(n)]), np.array([ubs[j] for j in range(n)]), c0)

