"""LP, MILP and SLP engines shared by the relaxation, bound tightening and heuristic layers."""

from .lp import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LpBuilder, LpProblem,
                 LpSolution, dual_objective, dump_lp, duality_gap, load_lp, lp_solve)
from .milp import MilpProblem, MilpSolution, milp_solve
from .slp import NlpModel, SlpResult, slp_solve

__all__ = [
    "INFEASIBLE", "ITERATION_LIMIT", "OPTIMAL", "UNBOUNDED",
    "LpBuilder", "LpProblem", "LpSolution", "lp_solve", "dual_objective", "duality_gap",
    "dump_lp", "load_lp", "MilpProblem", "MilpSolution", "milp_solve",
    "NlpModel", "SlpResult", "slp_solve",
]
