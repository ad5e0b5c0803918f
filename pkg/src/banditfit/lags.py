"""Lag-matrix form of the value recursion.

Unrolling the update gives ``x_j(t) = sum_r F[j, r] * u_j(t - r)`` with the
geometric kernel ``F[j, r] = (1 - alpha_j)**r * alpha_j * beta_j``. Stacking
the last ``p`` signal rows (newest first, zero padded) into ``U_p(t)`` makes
``x(t) = diag(F_p @ U_p(t))`` linear in the kernel. Replacing ``F`` by any
matrix ``G`` with nonnegative, nonincreasing rows gives the convex relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from banditfit.errors import InvalidInputError
from banditfit.model import Episode, Params

__all__ = [
    "LagStack",
    "build_lag_stack",
    "f_tilde",
    "f_map",
    "values_from_g",
    "is_relaxed_feasible",
]


@dataclass(frozen=True, eq=False)
class LagStack:
    """Padded reward-history matrices for one subsignal.

    ``mats`` has shape ``(n, p, m)`` and ``mats[t]`` is the ``p x m`` matrix
    for trial ``t`` (0-based), whose row ``r`` is ``u(t - r)`` or zero when
    ``t - r < 0``.
    """

    mats: np.ndarray

    @property
    def n(self) -> int:
        return self.mats.shape[0]

    @property
    def p(self) -> int:
        return self.mats.shape[1]

    @property
    def m(self) -> int:
        return self.mats.shape[2]

    def by_arm(self) -> np.ndarray:
        """Return an ``(m, n, p)`` copy: ``by_arm()[j] @ g`` is arm ``j``'s value series."""
        return np.ascontiguousarray(self.mats.transpose(2, 0, 1))


def build_lag_stack(episode: Episode, signal_index: int, p: int) -> LagStack:
    """Stack the ``p`` most recent rows of one subsignal for every trial."""
    if not 0 <= signal_index < episode.k:
        raise InvalidInputError(f"signal index {signal_index} out of range for k={episode.k}")
    n = episode.n
    if int(p) != p or not 1 <= p <= n:
        raise InvalidInputError(f"lag depth must satisfy 1 <= p <= n={n}, got {p}")
    p = int(p)
    u = episode.signals[signal_index]
    mats = np.zeros((n, p, episode.m))
    for r in range(p):
        mats[r:, r, :] = u[: n - r]
    mats.setflags(write=False)
    return LagStack(mats)


def _check_box(alpha, beta):
    if not (0.0 <= alpha <= 1.0) or not (beta >= 0.0) or not np.isfinite(beta):
        raise InvalidInputError(f"(alpha, beta) = ({alpha}, {beta}) is outside [0, 1] x [0, inf)")


def f_tilde(alpha: float, beta: float, p: int) -> np.ndarray:
    """Geometric kernel row ``((1 - alpha)**j * alpha * beta for j < p)``."""
    _check_box(alpha, beta)
    out = np.empty(p)
    ratio = 1.0 - alpha
    v = alpha * beta
    for j in range(p):
        out[j] = v
        v *= ratio
    return out


def f_map(params: Params, signal_index: int, p: int) -> np.ndarray:
    """Kernel matrix ``F_p`` (shape ``(m, p)``) of one subsignal."""
    if not 0 <= signal_index < params.k:
        raise InvalidInputError(f"signal index {signal_index} out of range for k={params.k}")
    rows = [
        f_tilde(a, b, p)
        for a, b in zip(params.alpha[signal_index], params.beta[signal_index])
    ]
    return np.stack(rows)


def is_relaxed_feasible(G: np.ndarray, atol: float = 0.0) -> bool:
    """True if every row of ``G`` is nonnegative and nonincreasing."""
    G = np.asarray(G, dtype=float)
    if np.any(G < -atol):
        return False
    return bool(np.all(np.diff(G, axis=1) <= atol))


def values_from_g(Gs: Sequence[np.ndarray], stacks: Sequence[LagStack], w) -> np.ndarray:
    """Value trajectory ``(n, m)`` implied by kernel matrices ``Gs``.

    ``x_j(t) = sum_i w_i * Gs[i][j] @ stacks[i].mats[t, :, j]``.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if not (len(Gs) == len(stacks) == w.size) or not stacks:
        raise InvalidInputError("need one kernel matrix and one lag stack per weight")
    n, p, m = stacks[0].mats.shape
    X = np.zeros((n, m))
    for G, st, wi in zip(Gs, stacks, w):
        G = np.asarray(G, dtype=float)
        if st.mats.shape != (n, p, m) or G.shape != (m, p):
            raise InvalidInputError(
                f"kernel {G.shape} and lag stack {st.mats.shape} do not match (m={m}, p={p})"
            )
        X += wi * np.einsum("trj,jr->tj", st.mats, G)
    return X
