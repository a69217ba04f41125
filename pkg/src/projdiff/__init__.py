"""projdiff: reverse-diffusion sampling interleaved with constraint projection.

Continuous (Langevin) and discrete (categorical) reverse processes are run
step by step; after every step the iterate is projected back onto the feasible
set declared by a constraint set, so emitted samples carry a hard feasibility
guarantee rather than a soft penalty. Projections are exact where a closed
form exists and otherwise run an augmented Lagrangian solver.
"""

__version__ = "0.1.0"
