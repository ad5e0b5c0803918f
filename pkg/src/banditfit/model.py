"""Bandit model types and forward evaluation.

An agent keeps one subvalue vector ``z_i(t)`` per reward subsignal and
updates it with forgetting Q-learning,

    z_i(t) = (1 - alpha_i) * z_i(t-1) + alpha_i * beta_i * u_i(t),   z_i(0) = 0,

where the products are elementwise over arms. The value vector driving the
softmax policy is the weighted sum ``x(t) = sum_i w_i z_i(t)``. Arms are
0-indexed everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from banditfit.errors import InvalidEpisodeError, InvalidInputError

__all__ = [
    "BanditSpec",
    "Episode",
    "Params",
    "one_hot",
    "value_trajectory",
    "policy_probs",
    "log_softmax_rows",
    "objective",
    "log_likelihood",
]


@dataclass(frozen=True)
class BanditSpec:
    """Arm count ``m``, subsignal count ``k`` and fixed subsignal weights ``w``."""

    m: int
    k: int = 1
    w: np.ndarray = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidInputError(f"arm count m must be an integer >= 2, got {self.m}")
        if int(self.k) != self.k or self.k < 1:
            raise InvalidInputError(f"subsignal count k must be an integer >= 1, got {self.k}")
        w = np.ones(self.k) if self.w is None else np.array(self.w, dtype=float).reshape(-1)
        if w.shape != (self.k,):
            raise InvalidInputError(f"weight vector must have {self.k} entries, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("weight vector must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "w", w)

    def __eq__(self, other):
        if not isinstance(other, BanditSpec):
            return NotImplemented
        return self.m == other.m and self.k == other.k and np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash((self.m, self.k, self.w.tobytes()))


@dataclass(frozen=True, eq=False)
class Episode:
    """Observed choices and the reward subsignals that preceded them.

    Parameters
    ----------
    actions : sequence of int
        ``actions[t]`` is the arm chosen at trial ``t`` (0-based).
    signals : sequence of array_like
        ``k`` matrices of shape ``(n, m)``. Row ``t`` is the signal the agent
        integrates *before* choosing ``actions[t]``.
    """

    actions: np.ndarray
    signals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        actions = np.asarray(self.actions)
        if actions.ndim != 1 or actions.size == 0:
            raise InvalidEpisodeError("actions must be a non-empty 1-d sequence")
        if not np.issubdtype(actions.dtype, np.integer):
            if not np.all(np.equal(np.mod(actions, 1), 0)):
                raise InvalidEpisodeError("actions must be integer arm indices")
        actions = actions.astype(np.int64)
        if np.any(actions < 0):
            raise InvalidEpisodeError("actions must be non-negative arm indices")
        if len(self.signals) == 0:
            raise InvalidEpisodeError("at least one signal matrix is required")
        n = actions.size
        sigs = []
        for i, s in enumerate(self.signals):
            s = np.array(s, dtype=float)
            if s.ndim != 2 or s.shape[0] != n:
                raise InvalidEpisodeError(
                    f"signal {i} must have shape (n={n}, m), got {s.shape}"
                )
            if not np.all(np.isfinite(s)):
                raise InvalidEpisodeError(f"signal {i} has non-finite entries")
            s.setflags(write=False)
            sigs.append(s)
        m = sigs[0].shape[1]
        if any(s.shape[1] != m for s in sigs):
            raise InvalidEpisodeError("all signal matrices must have the same arm count")
        if np.any(actions >= m):
            raise InvalidEpisodeError(f"action index out of range for m={m}")
        actions.setflags(write=False)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "signals", tuple(sigs))

    @property
    def n(self) -> int:
        return int(self.actions.size)

    @property
    def m(self) -> int:
        return int(self.signals[0].shape[1])

    @property
    def k(self) -> int:
        return len(self.signals)

    def check(self, spec: BanditSpec) -> None:
        """Raise :class:`InvalidEpisodeError` if the episode does not fit ``spec``."""
        if self.m != spec.m:
            raise InvalidEpisodeError(f"episode has {self.m} arms, spec has {spec.m}")
        if self.k != spec.k:
            raise InvalidEpisodeError(f"episode has {self.k} subsignals, spec has {spec.k}")

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            np.array_equal(self.actions, other.actions)
            and self.k == other.k
            and all(np.array_equal(a, b) for a, b in zip(self.signals, other.signals))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Params:
    """Learning rates and sensitivities, one ``(k, m)`` matrix each.

    ``alpha[i, j]`` and ``beta[i, j]`` belong to subsignal ``i`` and arm ``j``.
    Construction enforces ``0 <= alpha <= 1`` and ``beta >= 0``.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[None, :]
        if beta.ndim == 1:
            beta = beta[None, :]
        if alpha.ndim != 2 or alpha.shape != beta.shape:
            raise InvalidInputError(
                f"alpha and beta must be (k, m) matrices of equal shape, got {alpha.shape} and {beta.shape}"
            )
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise InvalidInputError("parameters must be finite")
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise InvalidInputError("learning rates must lie in [0, 1]")
        if np.any(beta < 0):
            raise InvalidInputError("sensitivities must be non-negative")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    @property
    def m(self) -> int:
        return self.alpha.shape[1]

    @classmethod
    def shared(cls, alpha: float, beta: float, m: int, k: int = 1) -> "Params":
        """Same ``(alpha, beta)`` for every arm and subsignal."""
        return cls(np.full((k, m), float(alpha)), np.full((k, m), float(beta)))

    def check(self, spec: BanditSpec) -> None:
        if self.alpha.shape != (spec.k, spec.m):
            raise InvalidInputError(
                f"params have shape {self.alpha.shape}, spec needs ({spec.k}, {spec.m})"
            )

    def __eq__(self, other):
        if not isinstance(other, Params):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha) and np.array_equal(self.beta, other.beta)

    __hash__ = None


def one_hot(actions: Sequence[int], m: int) -> np.ndarray:
    """Encode arm indices as an ``(n, m)`` 0/1 matrix with one 1 per row."""
    a = np.asarray(actions)
    if a.ndim != 1:
        raise InvalidEpisodeError("actions must be 1-d")
    if a.size and (np.any(a < 0) or np.any(a >= m)):
        raise InvalidEpisodeError(f"action index out of range for m={m}")
    Y = np.zeros((a.size, m))
    Y[np.arange(a.size), a.astype(np.int64)] = 1.0
    return Y


def _advance(z, decay, gain, u):
    # one forgetting Q-learning step for all subsignals at once; shared with the
    # simulator so replayed trajectories are bitwise identical
    return decay * z + gain * u


def value_trajectory(params: Params, episode: Episode, spec: BanditSpec) -> np.ndarray:
    """Return the ``(n, m)`` matrix whose row ``t`` is the value vector ``x(t)``."""
    episode.check(spec)
    params.check(spec)
    decay = 1.0 - params.alpha
    gain = params.alpha * params.beta
    U = np.stack(episode.signals, axis=1)  # (n, k, m)
    z = np.zeros((spec.k, spec.m))
    X = np.empty((episode.n, spec.m))
    for t in range(episode.n):
        z = _advance(z, decay, gain, U[t])
        X[t] = spec.w @ z
    return X


def policy_probs(x) -> np.ndarray:
    """Softmax choice probabilities for value vector ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("value vector must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def log_softmax_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    mx = X.max(axis=1, keepdims=True)
    shifted = X - mx
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def objective(params: Params, episode: Episode, spec: BanditSpec) -> float:
    """Negative log-likelihood of the observed choices, ``J >= 0``."""
    X = value_trajectory(params, episode, spec)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("value trajectory overflowed")
    logp = log_softmax_rows(X)
    return float(-logp[np.arange(episode.n), episode.actions].sum())


def log_likelihood(params: Params, episode: Episode, spec: BanditSpec) -> float:
    return -objective(params, episode, spec)
