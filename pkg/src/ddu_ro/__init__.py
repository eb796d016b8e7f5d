"""Two-stage robust optimization under decision-dependent uncertainty.

Exact and approximate column-and-constraint-generation solvers for problems
whose uncertainty set depends on the first-stage decision, covering mixed
integer uncertainty and mixed integer recourse.
"""

__version__ = "0.1.0"
