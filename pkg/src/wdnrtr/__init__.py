"""Joint pressure-valve and chlorine-booster placement for water networks.

The solution method alternates a polyhedral relaxation (lower bounds),
optimization-based tightening of flow bounds, and a rounding heuristic that
produces feasible placements (upper bounds).
"""

__version__ = "0.1.0"
