"""Energy-efficient transmission scheduling via structure-aware stochastic control.

Subpackages
-----------
pwl        concave piecewise-linear functions, sandwich approximation
env        channel, traffic, buffer, and cost/utility models
oracle     exact and approximate solvers for the discounted problem
learner    online post-decision-state learning
priority   multi-queue priority scheduling and learning
baselines  stability-constrained and tabular-Q reference schedulers
harness    experiment configs, runs, sweeps, metrics
"""

from ._kernels import USING_NUMBA
from .baselines import QLearningScheduler, StabilityScheduler
from .learner import Learner, StepSchedule, foresighted_optimize
from .priority import PriorityConfig, PriorityLearner
from .oracle import (ApproxSolution, DiscreteMdp, ExactSolution,
                     LagrangeResult, bellman_normal_iterate,
                     default_initial_state, lagrange_search, lagrange_step,
                     pd_operator_T, policy_cost, policy_value, solve_approx,
                     solve_exact)

__all__ = [
    "USING_NUMBA",
    "Learner", "StepSchedule", "foresighted_optimize",
    "PriorityConfig", "PriorityLearner",
    "QLearningScheduler", "StabilityScheduler",
    "ApproxSolution", "DiscreteMdp", "ExactSolution", "LagrangeResult",
    "bellman_normal_iterate", "default_initial_state", "lagrange_search",
    "lagrange_step", "pd_operator_T", "policy_cost", "policy_value",
    "solve_approx", "solve_exact",
]
__version__ = "0.1.0"
