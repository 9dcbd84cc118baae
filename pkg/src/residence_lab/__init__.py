"""Residence-time analysis of Ito stochastic systems.

Simulate sample paths and first-hitting (residence) times, check
Lyapunov-type certificates for regularity/recurrence/non-recurrence,
compute and empirically validate residence-time bounds, solve the 1-D
Dirichlet problem for the mean residence time, and synthesize
domain-aiming feedback controllers.
"""

__version__ = "0.1.0"

from .expr import EvalDomainError, ExprError, ParseError, eval_expr, grad_hess, parse, to_source
from .sde import (DEFAULT_SEED, Domain, PathOutcome, SdeSystem, SimulationResult,
                  closed_loop, em_step, gbm_cubic, linear_system, ou,
                  poly_drift_unit_noise, simulate_paths, simulate_until_hit)

__all__ = [
    "__version__",
    "ExprError", "ParseError", "EvalDomainError",
    "parse", "eval_expr", "grad_hess", "to_source",
    "Domain", "SdeSystem", "PathOutcome", "SimulationResult", "DEFAULT_SEED",
    "gbm_cubic", "ou", "poly_drift_unit_noise", "linear_system", "closed_loop",
    "em_step", "simulate_paths", "simulate_until_hit",
]
