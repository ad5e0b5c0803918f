"""Recovering learning rates and sensitivities from relaxed kernel rows.

Each row ``g`` of a relaxed kernel is matched by a geometric row
``(alpha * beta * (1 - alpha)**j)_j`` in least squares. The objective is
separable across rows, so every row is fit on its own with random restarts
and stops early once the residual reaches the tolerance, since zero is a
lower bound on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from banditfit.errors import DegenerateRowError, InvalidInputError, RecoveryError
from banditfit.lags import f_map, f_tilde
from banditfit.model import Params
from banditfit.relax import RelaxedProblem, RelaxedSolution

__all__ = [
    "RowFit",
    "Certificate",
    "row_loss_and_grad",
    "local_fit_row",
    "fit_row_multistart",
    "fit_row_logspace",
    "recover_params",
    "certify",
    "certificate_slack",
]

_BOUNDS = [(0.0, 1.0), (0.0, None)]


@dataclass(frozen=True)
class RowFit:
    alpha: float
    beta: float
    L_row: float
    starts_used: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and self.beta >= 0.0 and self.L_row >= 0.0):
            raise InvalidInputError(f"row fit outside the box: {self}")


@dataclass(frozen=True, eq=False)
class Certificate:
    """Outcome of the exact-solution check.

    ``global_optimal`` holds only at full depth (``p == n``) when the
    recovered kernel matches the relaxed kernel to ``eps_tilde`` in every
    entry and the summed squared error is at most ``epsilon``.
    ``decay_ratios[i]`` holds neighbouring-column ratios of relaxed kernel
    ``i``; 0/0 entries are NaN.
    """

    global_optimal: bool
    L_total: float
    epsilon: float
    eps_tilde: float
    max_abs_dev: float
    gap: float
    truncated: bool
    decay_ratios: tuple = ()


def row_loss_and_grad(z, g):
    """Squared error ``||f(alpha, beta) - g||^2`` and its gradient in ``(alpha, beta)``."""
    a, b = float(z[0]), float(z[1])
    p = g.size
    q = np.empty(p)
    q[0] = 1.0
    if p > 1:
        q[1:] = np.cumprod(np.full(p - 1, 1.0 - a))
    q_prev = np.zeros(p)
    q_prev[1:] = q[:-1]
    res = a * b * q - g
    da = b * (q - a * np.arange(p) * q_prev)
    db = a * q
    return float(res @ res), np.array([2.0 * (res @ da), 2.0 * (res @ db)])


def _clip_box(a, b):
    return float(np.clip(a, 0.0, 1.0)), float(max(b, 0.0))


def _canonical(a, b, g):
    a, b = _clip_box(a, b)
    if a == 0.0 or b == 0.0:
        # alpha * beta = 0 is not identifiable; report the canonical zero pair
        a, b = 0.0, 0.0
    res = f_tilde(a, b, g.size) - g
    return a, b, float(res @ res)


def local_fit_row(g_row, init) -> RowFit:
    """Local least-squares fit of one kernel row from ``init = (alpha0, beta0)``.

    Uses bounded L-BFGS-B with the analytic gradient and falls back to a
    bounded Nelder-Mead search when the quasi-Newton run reports failure.
    """
    g = np.asarray(g_row, dtype=float)
    if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)):
        raise InvalidInputError("kernel row must be a finite non-empty vector")
    a0, b0 = float(init[0]), float(init[1])
    if not (0.0 <= a0 <= 1.0 and b0 >= 0.0):
        raise InvalidInputError(f"initial point {init} is outside [0, 1] x [0, inf)")

    candidates = []
    res = minimize(
        row_loss_and_grad,
        np.array([a0, b0]),
        args=(g,),
        jac=True,
        method="L-BFGS-B",
        bounds=_BOUNDS,
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000},
    )
    if np.all(np.isfinite(res.x)) and np.isfinite(res.fun):
        candidates.append(_canonical(res.x[0], res.x[1], g))
    if not res.success or not candidates:
        start = res.x if candidates else np.array([a0, b0])
        nm = minimize(
            lambda z: row_loss_and_grad(z, g)[0],
            start,
            method="Nelder-Mead",
            bounds=_BOUNDS,
            options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 4000},
        )
        if np.all(np.isfinite(nm.x)) and np.isfinite(nm.fun):
            candidates.append(_canonical(nm.x[0], nm.x[1], g))
    if not candidates:
        raise RecoveryError("local row fit produced no finite iterate", best=None)
    a, b, L = min(candidates, key=lambda c: c[2])
    return RowFit(a, b, L, 1)


def fit_row_multistart(
    g_row,
    N: int = 10,
    eps_row: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    beta_high: float = 5.0,
) -> RowFit:
    """Best of up to ``N`` local fits from starts drawn on ``[0,1] x [0,beta_high]``.

    Returns as soon as a fit reaches ``L_row <= eps_row``. Ties keep the
    earliest restart.
    """
    if N < 1 or eps_row <= 0:
        raise InvalidInputError("need N >= 1 and eps_row > 0")
    g = np.asarray(g_row, dtype=float)
    if not np.any(g):
        return RowFit(0.0, 0.0, 0.0, 0)
    rng = np.random.default_rng() if rng is None else rng
    best = None
    failures = []
    for s in range(N):
        init = (rng.uniform(0.0, 1.0), rng.uniform(0.0, beta_high))
        try:
            fit = local_fit_row(g, init)
        except RecoveryError as exc:
            failures.append(exc)
            continue
        if best is None or fit.L_row < best.L_row:
            best = fit
        if best.L_row <= eps_row:
            return RowFit(best.alpha, best.beta, best.L_row, s + 1)
    if best is None:
        raise RecoveryError(f"all {N} restarts failed", best=None)
    return RowFit(best.alpha, best.beta, best.L_row, N)


def fit_row_logspace(g_row, floor: float = 1e-12) -> RowFit:
    """Closed-form fit of a kernel row by linear regression of ``log g`` on the lag.

    ``log g_j ~ j * log(1 - alpha) + log(alpha * beta)``. Entries are floored
    before the logarithm, so near-zero tails dominate the fit on long rows.
    Raises :class:`DegenerateRowError` when no positive learning rate can be
    recovered.
    """
    g = np.asarray(g_row, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(g < 0) or not np.all(np.isfinite(g)):
        raise InvalidInputError("log-space fit needs a finite nonnegative row")
    if floor <= 0:
        raise InvalidInputError("floor must be positive")
    p = g.size
    if p < 2:
        raise DegenerateRowError("a single lag does not determine the decay rate")
    b = np.log(np.maximum(g, floor))
    j = np.arange(p, dtype=float)
    A = np.column_stack([j, np.ones(p)])
    slope, intercept = np.linalg.solve(A.T @ A, A.T @ b)
    if slope >= 0.0:
        slope = -1e-12
        intercept = float(np.mean(b - slope * j))
    alpha = float(-np.expm1(slope))
    if not alpha > 0.0:
        raise DegenerateRowError("recovered learning rate is zero")
    with np.errstate(over="ignore"):
        beta = float(np.exp(intercept) / alpha)
    if not np.isfinite(beta):
        raise DegenerateRowError("recovered sensitivity overflowed")
    alpha, beta = _clip_box(alpha, beta)
    res = f_tilde(alpha, beta, p) - g
    return RowFit(alpha, beta, float(res @ res), 1)


def recover_params(
    sol: RelaxedSolution,
    N: int = 10,
    eps_tilde: float = 1e-5,
    seed: int = 0,
    beta_high: float = 5.0,
    logspace: bool = False,
    floor: float = 1e-12,
    tie_arms: bool = False,
):
    """Fit every row of every relaxed kernel; returns ``(Params, fits)``.

    ``fits[i][j]`` is the :class:`RowFit` of subsignal ``i``, arm ``j``.
    Each row draws its restarts from its own stream spawned from ``seed``.
    With ``tie_arms`` only the first row of each kernel is fit and its
    result is shared by every arm.
    """
    k = len(sol.Gs)
    m, p = sol.Gs[0].shape
    streams = np.random.SeedSequence(seed).spawn(k * m)
    eps_row = p * eps_tilde
    fits = []
    for i, G in enumerate(sol.Gs):
        row_fits = []
        for j in range(1 if tie_arms else m):
            rng = np.random.default_rng(streams[i * m + j])
            fit = None
            if logspace:
                try:
                    fit = fit_row_logspace(G[j], floor)
                except DegenerateRowError:
                    fit = None
            if fit is None:
                fit = fit_row_multistart(G[j], N, eps_row, rng, beta_high)
            row_fits.append(fit)
        if tie_arms:
            row_fits = row_fits * m
        fits.append(row_fits)
    alpha = np.array([[f.alpha for f in row] for row in fits])
    beta = np.array([[f.beta for f in row] for row in fits])
    return Params(alpha, beta), fits


def certify(
    params: Params,
    sol: RelaxedSolution,
    J_ub: float,
    eps_tilde: float = 1e-5,
) -> Certificate:
    """Check whether the recovered kernel reproduces the relaxed optimum."""
    if len(sol.Gs) != params.k or sol.Gs[0].shape[0] != params.m:
        raise InvalidInputError("parameters do not match the relaxed solution")
    p = sol.p
    devs = [f_map(params, i, p) - G for i, G in enumerate(sol.Gs)]
    max_abs = max(float(np.max(np.abs(d))) for d in devs)
    L_total = float(sum(np.sum(d * d) for d in devs))
    epsilon = params.k * params.m * p * eps_tilde
    truncated = sol.truncated
    ok = (not truncated) and max_abs <= eps_tilde and L_total <= epsilon
    ratios = []
    for G in sol.Gs:
        num, den = G[:, 1:], G[:, :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
        ratios.append(r)
    return Certificate(
        global_optimal=bool(ok),
        L_total=L_total,
        epsilon=float(epsilon),
        eps_tilde=float(eps_tilde),
        max_abs_dev=max_abs,
        gap=abs(float(J_ub) - float(sol.J_lb)),
        truncated=truncated,
        decay_ratios=tuple(ratios),
    )


def certificate_slack(prob: RelaxedProblem, eps_tilde: float) -> float:
    """Largest objective change an ``eps_tilde`` entrywise kernel perturbation can cause.

    The choice loss has gradient ``softmax(x) - y`` with l1 norm at most 2,
    and each value entry moves by at most ``eps_tilde`` times the l1 norm of
    its lag column.
    """
    col_l1 = np.abs(prob.arm_mats).sum(axis=3)  # (k, m, n)
    per_trial = np.tensordot(np.abs(prob.w), col_l1, axes=1).max(axis=0)  # (n,)
    return float(2.0 * eps_tilde * per_trial.sum())
