"""End-to-end fits: the two-step sequential heuristic and the direct baseline.

The sequential fit solves the relaxed problem for a lower bound ``J_lb`` and
a relaxed kernel, recovers parameters row by row, and scores them with the
exact objective to get ``J_ub``. The direct fit runs bounded local searches
on the exact objective from random starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from banditfit.errors import BanditFitError, InvalidInputError, RecoveryError
from banditfit.model import BanditSpec, Episode, Params, objective
from banditfit.recovery import Certificate, certify, recover_params
from banditfit.relax import RelaxedProblem, RelaxedSolution, SolverOptions, solve_relaxed

__all__ = [
    "METHODS",
    "FitOptions",
    "FitReport",
    "FitError",
    "fit",
    "fit_sequential",
    "fit_direct",
    "lower_bound_only",
    "audit",
]

METHODS = ("sequential", "direct", "logspace")


class FitError(BanditFitError):
    """A fit failed part-way; ``partial`` carries whatever was computed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or {}


@dataclass(frozen=True)
class FitOptions:
    """Options shared by all fitting methods.

    ``p=None`` means full depth (``p = n``). ``beta_high`` is the upper end
    of the uniform draw for initial sensitivities; it does not bound the fit.
    ``tie_arms`` fits one ``(alpha, beta)`` per subsignal shared by all arms.
    """

    p: Optional[int] = None
    N: int = 10
    eps_tilde: float = 1e-5
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    method: str = "sequential"
    beta_high: float = 5.0
    floor: float = 1e-12
    with_bound: bool = False
    tie_arms: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.N < 1:
            raise InvalidInputError("need at least one restart")
        if self.eps_tilde <= 0 or self.beta_high <= 0 or self.floor <= 0:
            raise InvalidInputError("eps_tilde, beta_high and floor must be positive")
        if self.p is not None and self.p < 1:
            raise InvalidInputError("lag depth must be >= 1")

    def depth(self, n: int) -> int:
        if self.p is None:
            return n
        if self.p > n:
            raise InvalidInputError(f"lag depth {self.p} exceeds trial count {n}")
        return int(self.p)


@dataclass(frozen=True, eq=False)
class FitReport:
    """Result of one fit.

    ``J_lb`` is ``None`` when no relaxed problem was solved. When
    ``lb_truncated`` is set, ``J_lb`` bounds the truncated problem only and
    is not a bound on ``J_ub``'s problem.
    """

    method: str
    params: Params
    J_ub: float
    J_lb: Optional[float]
    gap: Optional[float]
    n: int
    p: int
    lb_truncated: bool
    converged: bool
    L_total: Optional[float] = None
    certificate: Optional[Certificate] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return bool(self.certificate is not None and self.certificate.global_optimal)


def fit(episode: Episode, spec: BanditSpec, opts: Optional[FitOptions] = None) -> FitReport:
    """Dispatch on ``opts.method``."""
    opts = opts or FitOptions()
    if opts.method == "direct":
        return fit_direct(episode, spec, opts)
    return fit_sequential(episode, spec, opts)


def lower_bound_only(
    episode: Episode, spec: BanditSpec, opts: Optional[FitOptions] = None
) -> RelaxedSolution:
    """Solve only the relaxed problem; ``J_lb`` bounds any parameters' objective when ``p == n``."""
    opts = opts or FitOptions()
    prob = RelaxedProblem.from_episode(episode, spec, opts.depth(episode.n), opts.tie_arms)
    return solve_relaxed(prob, opts.solver)


def audit(params: Params, episode: Episode, spec: BanditSpec, sol: RelaxedSolution) -> float:
    """Objective gap of third-party parameters above a relaxed lower bound."""
    return objective(params, episode, spec) - sol.J_lb


def fit_sequential(
    episode: Episode, spec: BanditSpec, opts: Optional[FitOptions] = None
) -> FitReport:
    """Relaxed solve followed by row-wise parameter recovery."""
    opts = opts or FitOptions()
    episode.check(spec)
    p = opts.depth(episode.n)
    prob = RelaxedProblem.from_episode(episode, spec, p, opts.tie_arms)
    sol = solve_relaxed(prob, opts.solver)
    try:
        params, fits = recover_params(
            sol,
            N=opts.N,
            eps_tilde=opts.eps_tilde,
            seed=opts.seed,
            beta_high=opts.beta_high,
            logspace=opts.method == "logspace",
            floor=opts.floor,
            tie_arms=opts.tie_arms,
        )
    except RecoveryError as exc:
        raise FitError(f"parameter recovery failed: {exc}", {"relaxed": sol}) from exc
    J_ub = objective(params, episode, spec)
    cert = certify(params, sol, J_ub, opts.eps_tilde)
    return FitReport(
        method=opts.method,
        params=params,
        J_ub=J_ub,
        J_lb=sol.J_lb,
        gap=abs(J_ub - sol.J_lb),
        n=episode.n,
        p=p,
        lb_truncated=sol.truncated,
        converged=sol.converged,
        L_total=cert.L_total,
        certificate=cert,
        diagnostics={
            "solver_iters": sol.iters,
            "solver_converged": sol.converged,
            "pg_norm": sol.pg_norm,
            "starts_used": [[f.starts_used for f in row] for row in fits],
            "row_losses": [[f.L_row for f in row] for row in fits],
        },
    )


def _direct_loss_grad(z, prob: RelaxedProblem):
    k, m, n = prob.k, prob.var_rows, prob.p
    alpha = np.clip(z[: k * m].reshape(k, m), 0.0, 1.0)
    beta = np.maximum(z[k * m :].reshape(k, m), 0.0)
    q = np.ones((k, m, n))
    if n > 1:
        q[..., 1:] = np.cumprod(np.broadcast_to((1.0 - alpha)[..., None], (k, m, n - 1)), axis=2)
    q_prev = np.zeros_like(q)
    q_prev[..., 1:] = q[..., :-1]
    ab = (alpha * beta)[..., None]
    J, gG = prob.var_loss_grad(ab * q)
    r = np.arange(n)
    dG_da = beta[..., None] * (q - alpha[..., None] * r * q_prev)
    dG_db = alpha[..., None] * q
    ga = np.sum(gG * dG_da, axis=2)
    gb = np.sum(gG * dG_db, axis=2)
    return J, np.concatenate([ga.ravel(), gb.ravel()])


def fit_direct(episode: Episode, spec: BanditSpec, opts: Optional[FitOptions] = None) -> FitReport:
    """Best of ``opts.N`` bounded local minimizations of the exact objective."""
    opts = opts or FitOptions(method="direct")
    episode.check(spec)
    k, n = spec.k, episode.n
    prob = RelaxedProblem.from_episode(episode, spec, n, opts.tie_arms)
    r = prob.var_rows
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    bounds = [(0.0, 1.0)] * (k * r) + [(0.0, None)] * (k * r)
    restarts = []
    best = None
    for s in range(opts.N):
        z0 = np.concatenate(
            [rng.uniform(0.0, 1.0, k * r), rng.uniform(0.0, opts.beta_high, k * r)]
        )
        res = minimize(
            _direct_loss_grad, z0, args=(prob,), jac=True, method="L-BFGS-B", bounds=bounds
        )
        a = np.clip(res.x[: k * r], 0.0, 1.0).reshape(k, r)
        b = np.maximum(res.x[k * r :], 0.0).reshape(k, r)
        cand = Params(np.repeat(a, spec.m // r, axis=1), np.repeat(b, spec.m // r, axis=1))
        J = objective(cand, episode, spec)
        restarts.append({"J": J, "success": bool(res.success), "nit": int(res.nit)})
        if best is None or J < best[0]:
            best = (J, cand, s)
    J_ub, params, best_idx = best
    J_lb = gap = None
    converged = True
    diagnostics = {"restarts": restarts, "best_restart": best_idx}
    if opts.with_bound:
        sol = solve_relaxed(prob, opts.solver)
        J_lb, gap, converged = sol.J_lb, abs(J_ub - sol.J_lb), sol.converged
        diagnostics["solver_iters"] = sol.iters
        diagnostics["solver_converged"] = sol.converged
    return FitReport(
        method="direct",
        params=params,
        J_ub=J_ub,
        J_lb=J_lb,
        gap=gap,
        n=n,
        p=n,
        lb_truncated=False,
        converged=converged,
        diagnostics=diagnostics,
    )


def with_method(opts: FitOptions, method: str, **changes) -> FitOptions:
    """Copy of ``opts`` with another method (and any other field changes)."""
    return replace(opts, method=method, **changes)
