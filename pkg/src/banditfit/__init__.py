"""Maximum-likelihood fitting of forgetting Q-learning bandit agents.

A convex relaxation of the choice negative log-likelihood gives a lower
bound ``J_lb`` and a relaxed kernel; fitting geometric rows to that kernel
recovers learning rates and sensitivities whose exact objective ``J_ub``
is an upper bound. When the two meet, the fit is certified optimal.
"""

from banditfit.errors import (
    BanditFitError,
    DegenerateRowError,
    InvalidEpisodeError,
    InvalidInputError,
    RecoveryError,
)
from banditfit.lags import LagStack, build_lag_stack, f_map, f_tilde, values_from_g
from banditfit.model import (
    BanditSpec,
    Episode,
    Params,
    log_likelihood,
    objective,
    one_hot,
    policy_probs,
    value_trajectory,
)
from banditfit.pipeline import (
    FitError,
    FitOptions,
    FitReport,
    audit,
    fit,
    fit_direct,
    fit_sequential,
    lower_bound_only,
)
from banditfit.recovery import (
    Certificate,
    RowFit,
    certify,
    fit_row_logspace,
    fit_row_multistart,
    local_fit_row,
    recover_params,
)
from banditfit.relax import (
    RelaxedProblem,
    RelaxedSolution,
    SolverOptions,
    project_row_monotone_nonneg,
    relaxed_objective_and_gradient,
    solve_relaxed,
)
from banditfit.sim import BenchConfig, EnvSpec, run_benchmark, simulate_episode

__version__ = "0.1.0"

__all__ = [
    "BanditFitError",
    "DegenerateRowError",
    "InvalidEpisodeError",
    "InvalidInputError",
    "RecoveryError",
    "LagStack",
    "build_lag_stack",
    "f_map",
    "f_tilde",
    "values_from_g",
    "BanditSpec",
    "Episode",
    "Params",
    "log_likelihood",
    "objective",
    "one_hot",
    "policy_probs",
    "value_trajectory",
    "FitError",
    "FitOptions",
    "FitReport",
    "audit",
    "fit",
    "fit_direct",
    "fit_sequential",
    "lower_bound_only",
    "Certificate",
    "RowFit",
    "certify",
    "fit_row_logspace",
    "fit_row_multistart",
    "local_fit_row",
    "recover_params",
    "RelaxedProblem",
    "RelaxedSolution",
    "SolverOptions",
    "project_row_monotone_nonneg",
    "relaxed_objective_and_gradient",
    "solve_relaxed",
    "BenchConfig",
    "EnvSpec",
    "run_benchmark",
    "simulate_episode",
]
