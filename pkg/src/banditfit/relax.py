"""Convex relaxed fitting problem and its projected first-order solver.

The relaxed problem minimizes the choice negative log-likelihood over kernel
matrices ``G`` whose rows are only required to be nonnegative and
nonincreasing. The feasible set is a product of monotone cones, so the
Euclidean projection is exact and cheap (pool-adjacent-violators then clamp),
and an accelerated projected gradient method applies directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from banditfit.errors import InvalidInputError
from banditfit.lags import LagStack, build_lag_stack
from banditfit.model import BanditSpec, Episode, one_hot

__all__ = [
    "project_row_monotone_nonneg",
    "project_rows",
    "RelaxedProblem",
    "SolverOptions",
    "RelaxedSolution",
    "relaxed_objective_and_gradient",
    "solve_relaxed",
]

log = logging.getLogger(__name__)


@njit(cache=True)
def _pava_nonincreasing_clamped(V, out):
    rows, p = V.shape
    vals = np.empty(p)
    wts = np.empty(p)
    lens = np.empty(p, np.int64)
    for i in range(rows):
        nb = 0
        for j in range(p):
            vals[nb] = V[i, j]
            wts[nb] = 1.0
            lens[nb] = 1
            nb += 1
            # merge while the newest block breaks the nonincreasing order
            while nb > 1 and vals[nb - 2] < vals[nb - 1]:
                w = wts[nb - 2] + wts[nb - 1]
                vals[nb - 2] = (wts[nb - 2] * vals[nb - 2] + wts[nb - 1] * vals[nb - 1]) / w
                wts[nb - 2] = w
                lens[nb - 2] += lens[nb - 1]
                nb -= 1
        pos = 0
        for b in range(nb):
            v = vals[b] if vals[b] > 0.0 else 0.0
            for _ in range(lens[b]):
                out[i, pos] = v
                pos += 1


def project_rows(V: np.ndarray) -> np.ndarray:
    """Project every row of a 2-d array onto ``{z : z_0 >= z_1 >= ... >= 0}``."""
    V = np.ascontiguousarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise InvalidInputError("project_rows expects a 2-d array")
    if not np.all(np.isfinite(V)):
        raise InvalidInputError("cannot project non-finite values")
    out = np.empty_like(V)
    if V.size:
        _pava_nonincreasing_clamped(V, out)
    return out


def project_row_monotone_nonneg(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto nonincreasing nonnegative vectors.

    Pool-adjacent-violators for the nonincreasing order, then clamping at
    zero. Clamping a nonincreasing sequence keeps it nonincreasing, and the
    composition is the exact projection onto the intersection.

    >>> project_row_monotone_nonneg([1.0, 3.0, 2.0])
    array([2., 2., 2.])
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError("expected a 1-d vector")
    return project_rows(v[None, :])[0]


@dataclass(frozen=True, eq=False)
class RelaxedProblem:
    """Data of one relaxed fit: one-hot choices, lag stacks and weights.

    Build with :meth:`from_episode`. ``arm_mats[i, j]`` is the ``(n, p)``
    design matrix of subsignal ``i`` for arm ``j``. With ``tie_arms`` all arms
    of a subsignal share one kernel row (one ``(alpha, beta)`` per subsignal).
    """

    Y: np.ndarray
    stacks: tuple
    w: np.ndarray
    arm_mats: np.ndarray = field(repr=False)
    tie_arms: bool = False

    @classmethod
    def from_episode(
        cls, episode: Episode, spec: BanditSpec, p: Optional[int] = None, tie_arms: bool = False
    ):
        episode.check(spec)
        p = episode.n if p is None else p
        stacks = tuple(build_lag_stack(episode, i, p) for i in range(spec.k))
        return cls.from_parts(one_hot(episode.actions, spec.m), stacks, spec.w, tie_arms)

    @classmethod
    def from_parts(cls, Y, stacks: Sequence[LagStack], w, tie_arms: bool = False):
        Y = np.asarray(Y, dtype=float)
        w = np.asarray(w, dtype=float).reshape(-1)
        if not stacks or len(stacks) != w.size:
            raise InvalidInputError("need one lag stack per subsignal weight")
        shape = stacks[0].mats.shape
        if any(s.mats.shape != shape for s in stacks):
            raise InvalidInputError("lag stacks must share (n, p, m)")
        n, p, m = shape
        if Y.shape != (n, m):
            raise InvalidInputError(f"choice matrix has shape {Y.shape}, expected {(n, m)}")
        if p > n:
            raise InvalidInputError("lag depth cannot exceed the trial count")
        arm_mats = np.stack([s.by_arm() for s in stacks])
        return cls(Y, tuple(stacks), w, arm_mats, bool(tie_arms))

    @property
    def k(self) -> int:
        return self.arm_mats.shape[0]

    @property
    def m(self) -> int:
        return self.arm_mats.shape[1]

    @property
    def n(self) -> int:
        return self.arm_mats.shape[2]

    @property
    def p(self) -> int:
        return self.arm_mats.shape[3]

    def values(self, G: np.ndarray) -> np.ndarray:
        """Value trajectory ``(n, m)`` for a stacked ``(k, m, p)`` kernel."""
        per = np.matmul(self.arm_mats, G[..., None])[..., 0]  # (k, m, n)
        return np.tensordot(self.w, per, axes=1).T

    def loss_grad(self, G: np.ndarray):
        X = self.values(G)
        mx = X.max(axis=1, keepdims=True)
        e = np.exp(X - mx)
        s = e.sum(axis=1, keepdims=True)
        J = float(np.sum(mx[:, 0] + np.log(s[:, 0])) - np.sum(X * self.Y))
        R = e / s - self.Y  # (n, m)
        grad = np.matmul(R.T[None, :, None, :], self.arm_mats)[:, :, 0, :]
        grad *= self.w[:, None, None]
        return J, grad

    def loss(self, G: np.ndarray) -> float:
        X = self.values(G)
        mx = X.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(X - mx).sum(axis=1))
        return float(np.sum(lse) - np.sum(X * self.Y))

    @property
    def var_rows(self) -> int:
        """Free kernel rows per subsignal: 1 when arms share parameters, else ``m``."""
        return 1 if self.tie_arms else self.m

    def expand(self, V: np.ndarray) -> np.ndarray:
        if self.tie_arms:
            return np.repeat(V, self.m, axis=1)
        return V

    def var_loss_grad(self, V: np.ndarray):
        J, grad = self.loss_grad(self.expand(V))
        if self.tie_arms:
            grad = grad.sum(axis=1, keepdims=True)
        return J, grad

    def stack_kernels(self, Gs) -> np.ndarray:
        G = np.array([np.asarray(g, dtype=float) for g in Gs])
        if G.shape != (self.k, self.m, self.p):
            raise InvalidInputError(
                f"kernels have shape {G.shape}, expected {(self.k, self.m, self.p)}"
            )
        return G


@dataclass(frozen=True)
class SolverOptions:
    """Stopping and step-size rules for :func:`solve_relaxed`.

    ``rel_tol`` applies to the objective decrease over the last ``window``
    accepted iterations, relative to ``max(1, |J|)``. ``grad_tol`` applies to
    the projected-gradient norm ``||G - P(G - grad)||``.
    """

    max_iters: int = 50_000
    rel_tol: float = 1e-9
    grad_tol: float = 1e-7
    window: int = 10
    initial_step: float = 1.0
    backtrack: float = 0.5
    step_growth: float = 1.1

    def __post_init__(self):
        if self.max_iters < 1 or self.window < 1:
            raise InvalidInputError("max_iters and window must be positive")
        if self.rel_tol <= 0 or self.grad_tol <= 0 or self.initial_step <= 0:
            raise InvalidInputError("tolerances and initial step must be positive")
        if not 0 < self.backtrack < 1:
            raise InvalidInputError("backtracking factor must lie in (0, 1)")
        if self.step_growth < 1:
            raise InvalidInputError("step growth must be >= 1")


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    Gs: tuple
    J_lb: float
    iters: int
    converged: bool
    pg_norm: float
    n: int
    p: int
    history: np.ndarray = field(default=None, repr=False)

    @property
    def truncated(self) -> bool:
        return self.p < self.n


def relaxed_objective_and_gradient(Gs, prob: RelaxedProblem):
    """Relaxed negative log-likelihood and its gradient, one ``(m, p)`` block per subsignal."""
    J, grad = prob.loss_grad(prob.stack_kernels(Gs))
    return J, [grad[i] for i in range(prob.k)]


def _project(G):
    k, m, p = G.shape
    return project_rows(G.reshape(k * m, p)).reshape(k, m, p)


def solve_relaxed(
    prob: RelaxedProblem,
    opts: Optional[SolverOptions] = None,
    G0=None,
) -> RelaxedSolution:
    """Minimize the relaxed objective by accelerated projected gradient.

    Momentum is reset whenever the objective would increase or the momentum
    direction opposes the last step; a rejected step is retried from the
    last accepted point, so accepted objective values never increase. Step
    sizes come from a backtracking test on the quadratic upper model.
    """
    opts = opts or SolverOptions()
    if G0 is None:
        G = np.zeros((prob.k, prob.var_rows, prob.p))
    else:
        G = prob.stack_kernels(G0)
        if prob.tie_arms:
            G = G.mean(axis=1, keepdims=True)
        G = _project(G)
    J, g = prob.var_loss_grad(G)
    Z, Jz, gz = G, J, g
    theta = 1.0
    step = opts.initial_step
    history = [J]
    converged = False
    pg = np.inf
    it = 0
    while it < opts.max_iters:
        it += 1
        step = step * opts.step_growth
        while True:
            Gn = _project(Z - step * gz)
            d = Gn - Z
            Jn, gn = prob.var_loss_grad(Gn)
            slack = 1e-13 * max(1.0, abs(Jz))
            if Jn <= Jz + np.vdot(gz, d) + np.vdot(d, d) / (2.0 * step) + slack:
                break
            step *= opts.backtrack
            if step < 1e-30:
                break
        if step < 1e-30:
            log.warning("step size collapsed after %d iterations", it)
            break
        if Jn > J:
            if Z is G:
                # a plain projected step from an accepted point cannot ascend
                # beyond roundoff; treat as stalled
                pg = float(np.linalg.norm(G - _project(G - g)))
                converged = pg <= opts.grad_tol * 10
                break
            theta = 1.0
            Z, Jz, gz = G, J, g
            continue
        theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        if np.vdot(Z - Gn, Gn - G) > 0:
            theta, theta_next = 1.0, 1.0
        Z = Gn + ((theta - 1.0) / theta_next) * (Gn - G)
        theta = theta_next
        G, J, g = Gn, Jn, gn
        history.append(J)
        pg = float(np.linalg.norm(G - _project(G - g)))
        if pg <= opts.grad_tol:
            converged = True
            break
        if len(history) > opts.window:
            drop = history[-opts.window - 1] - history[-1]
            if drop <= opts.rel_tol * max(1.0, abs(J)):
                converged = True
                break
        if theta == 1.0:
            Z, Jz, gz = G, J, g
        else:
            Jz, gz = prob.var_loss_grad(Z)
    G = prob.expand(G)
    J_lb = prob.loss(G)
    if not converged:
        log.info("relaxed solve stopped after %d iterations without meeting tolerances", it)
    return RelaxedSolution(
        Gs=tuple(G[i].copy() for i in range(prob.k)),
        J_lb=J_lb,
        iters=it,
        converged=converged,
        pg_norm=pg,
        n=prob.n,
        p=prob.p,
        history=np.asarray(history),
    )
