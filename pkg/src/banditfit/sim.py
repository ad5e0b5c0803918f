"""Simulated forgetting Q-learning agents and desk-scale benchmarks.

Trial ordering: the signal row ``u(t)`` reports the outcome of the choice
made at trial ``t - 1`` (the first row is zero), the agent folds it into its
values, and then draws ``a(t)`` from the softmax of ``x(t)``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from banditfit.errors import BanditFitError, InvalidInputError
from banditfit.model import BanditSpec, Episode, Params, _advance, objective, policy_probs
from banditfit.pipeline import FitOptions, fit
from banditfit.relax import SolverOptions

__all__ = [
    "SCHEMES",
    "BENCH_METHODS",
    "EnvSpec",
    "BenchConfig",
    "BenchResult",
    "simulate_episode",
    "simulate_configured",
    "episode_seeds",
    "draw_params",
    "run_benchmark",
    "default_workers",
]

log = logging.getLogger(__name__)

SCHEMES = ("reward", "reward+action")
BENCH_METHODS = ("sequential", "truncated", "direct", "logspace")
GAP_BIN_EDGES = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0, 20.0, np.inf)


@dataclass(frozen=True)
class EnvSpec:
    """Static Bernoulli bandit.

    ``scheme="reward"`` emits one subsignal (1 for the chosen arm when it paid
    out); ``"reward+action"`` adds a second, ungated subsignal marking the
    chosen arm.
    """

    reward_probs: tuple
    scheme: str = "reward"

    def __post_init__(self):
        probs = tuple(float(x) for x in self.reward_probs)
        if len(probs) < 2:
            raise InvalidInputError("need at least two arms")
        if any(not 0.0 <= x <= 1.0 for x in probs):
            raise InvalidInputError("reward probabilities must lie in [0, 1]")
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        object.__setattr__(self, "reward_probs", probs)

    @property
    def m(self) -> int:
        return len(self.reward_probs)

    @property
    def k(self) -> int:
        return 1 if self.scheme == "reward" else 2

    def bandit_spec(self, w=None) -> BanditSpec:
        return BanditSpec(self.m, self.k, w)


def simulate_episode(
    env: EnvSpec,
    params: Params,
    n: int,
    rng: np.random.Generator,
    w=None,
    return_probs: bool = False,
):
    """Run one agent for ``n`` trials.

    Returns the :class:`Episode`, plus the ``(n, m)`` matrix of choice
    probabilities used at each trial when ``return_probs`` is set.
    """
    spec = env.bandit_spec(w)
    if params.alpha.shape != (spec.k, spec.m):
        raise InvalidInputError(
            f"scheme {env.scheme!r} with {spec.m} arms needs params of shape "
            f"({spec.k}, {spec.m}), got {params.alpha.shape}"
        )
    if n < 1:
        raise InvalidInputError("need at least one trial")
    m, k = spec.m, spec.k
    decay = 1.0 - params.alpha
    gain = params.alpha * params.beta
    U = np.zeros((n, k, m))
    actions = np.empty(n, dtype=np.int64)
    probs = np.empty((n, m))
    z = np.zeros((k, m))
    for t in range(n):
        z = _advance(z, decay, gain, U[t])
        x = spec.w @ z
        pr = policy_probs(x)
        probs[t] = pr
        a = int(np.searchsorted(np.cumsum(pr), rng.random(), side="right"))
        a = min(a, m - 1)
        actions[t] = a
        rewarded = rng.random() < env.reward_probs[a]
        if t + 1 < n:
            if rewarded:
                U[t + 1, 0, a] = 1.0
            if k == 2:
                U[t + 1, 1, a] = 1.0
    episode = Episode(actions, tuple(U[:, i, :] for i in range(k)))
    if return_probs:
        return episode, probs
    return episode


@dataclass(frozen=True)
class BenchConfig:
    """Benchmark batch settings.

    ``reward_probs=None`` draws each arm's payout probability uniformly on
    ``[0, 1]`` per episode. ``beta_range=None`` picks ``(0, 5)`` for the
    reward-only scheme and ``(0, 10)`` for the reward subsignal of the
    two-signal scheme. With ``shared_arms`` every arm gets the same true
    draw; ``tie_arms`` makes the fits estimate one pair per subsignal too.
    """

    episodes: int = 100
    n: int = 200
    m: int = 2
    scheme: str = "reward"
    methods: tuple = ("sequential",)
    seed: int = 0
    reward_probs: Optional[tuple] = None
    alpha_range: tuple = (0.0, 1.0)
    beta_range: Optional[tuple] = None
    alpha_act_range: tuple = (0.0, 1.0)
    beta_act_range: tuple = (0.0, 5.0)
    shared_arms: bool = True
    tie_arms: bool = False
    truncated_p: int = 5
    N: int = 10
    eps_tilde: float = 1e-5
    beta_high: float = 5.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    workers: Optional[int] = None

    def __post_init__(self):
        if self.episodes < 1 or self.n < 1 or self.m < 2:
            raise InvalidInputError("need episodes >= 1, n >= 1 and m >= 2")
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"unknown scheme {self.scheme!r}")
        bad = [x for x in self.methods if x not in BENCH_METHODS]
        if bad or not self.methods:
            raise InvalidInputError(f"unknown benchmark methods {bad}; choose from {BENCH_METHODS}")
        if self.reward_probs is not None and len(self.reward_probs) != self.m:
            raise InvalidInputError("reward_probs needs one entry per arm")
        if not 1 <= self.truncated_p <= self.n:
            raise InvalidInputError("truncated_p must lie in [1, n]")

    @property
    def k(self) -> int:
        return 1 if self.scheme == "reward" else 2

    def resolved_beta_range(self) -> tuple:
        if self.beta_range is not None:
            return tuple(self.beta_range)
        return (0.0, 5.0) if self.scheme == "reward" else (0.0, 10.0)

    def fit_options(self, method: str, seed: int) -> FitOptions:
        base = FitOptions(
            N=self.N,
            eps_tilde=self.eps_tilde,
            seed=seed,
            solver=self.solver,
            beta_high=self.beta_high,
            tie_arms=self.tie_arms,
        )
        if method == "truncated":
            return replace(base, method="sequential", p=self.truncated_p)
        return replace(base, method=method)


def draw_params(config: BenchConfig, rng: np.random.Generator) -> Params:
    """Draw true parameters for one episode from the configured ranges."""
    ranges = [(config.alpha_range, config.resolved_beta_range())]
    if config.k == 2:
        ranges.append((config.alpha_act_range, config.beta_act_range))
    size = 1 if config.shared_arms else config.m
    alpha = np.empty((config.k, config.m))
    beta = np.empty((config.k, config.m))
    for i, ((alo, ahi), (blo, bhi)) in enumerate(ranges):
        alpha[i] = rng.uniform(alo, ahi, size)
        beta[i] = rng.uniform(blo, bhi, size)
    return Params(alpha, beta)


@dataclass
class BenchResult:
    config: BenchConfig
    records: list
    reports: dict
    episodes: list
    truths: list
    aggregates: dict


def default_workers() -> int:
    """Worker count from ``BANDITFIT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("BANDITFIT_THREADS", "1")))
    except ValueError:
        return 1


def _episode_seeds(config: BenchConfig):
    out = []
    for child in np.random.SeedSequence(config.seed).spawn(config.episodes):
        sim_ss, fit_ss = child.spawn(2)
        out.append((sim_ss, int(fit_ss.generate_state(1)[0])))
    return out


def episode_seeds(config: BenchConfig):
    """Per-episode ``(simulation SeedSequence, fit seed)`` pairs for a batch."""
    return _episode_seeds(config)


def simulate_configured(config: BenchConfig, sim_ss):
    """Draw truth and environment from one episode stream and simulate.

    Returns ``(episode, truth, env)``.
    """
    rng = np.random.default_rng(sim_ss)
    truth = draw_params(config, rng)
    probs = config.reward_probs
    if probs is None:
        probs = tuple(rng.uniform(0.0, 1.0, config.m))
    env = EnvSpec(probs, config.scheme)
    return simulate_episode(env, truth, config.n, rng), truth, env


def _run_one(args):
    config, idx, sim_ss, fit_seed = args
    episode, truth, env = simulate_configured(config, sim_ss)
    spec = env.bandit_spec()
    J_true = objective(truth, episode, spec)
    record = {"episode": idx, "fit_seed": fit_seed, "status": "ok", "error": "", "true_ll": -J_true}
    reports = {}
    try:
        for method in config.methods:
            rep = fit(episode, spec, config.fit_options(method, fit_seed))
            reports[method] = rep
            record[method] = {
                "ll": -rep.J_ub,
                "J_ub": rep.J_ub,
                "J_lb": rep.J_lb,
                "gap": rep.gap,
                "certified": rep.certified,
                "lb_truncated": rep.lb_truncated,
                "converged": rep.converged,
                "alpha_err": np.abs(rep.params.alpha - truth.alpha),
                "beta_err": np.abs(rep.params.beta - truth.beta),
            }
    except (BanditFitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("episode %d failed: %s", idx, exc)
        record["status"] = "error"
        record["error"] = f"{type(exc).__name__}: {exc}"
    record["reward_probs"] = env.reward_probs
    return record, reports, episode, truth


def _aggregate(config: BenchConfig, records: Sequence[dict]) -> dict:
    ok = [r for r in records if r["status"] == "ok"]
    agg = {"episodes": len(records), "succeeded": len(ok), "methods": {}}
    for method in config.methods:
        recs = [r[method] for r in ok if method in r]
        if not recs:
            continue
        J_ub = np.array([r["J_ub"] for r in recs])
        entry = {"median_J_ub": float(np.median(J_ub))}
        if recs[0]["J_lb"] is not None:
            gaps = np.array([r["gap"] for r in recs])
            cert = np.array([r["certified"] for r in recs])
            counts, _ = np.histogram(gaps, bins=np.array(GAP_BIN_EDGES))
            entry.update(
                median_gap=float(np.median(gaps)),
                frac_gap_below_5=float(np.mean(gaps < 5.0)),
                certified=int(cert.sum()),
                max_certified_gap=float(gaps[cert].max()) if cert.any() else None,
                gap_hist_edges=list(GAP_BIN_EDGES),
                gap_hist_counts=counts.tolist(),
            )
            if not recs[0]["lb_truncated"]:
                true_J = np.array([-r["true_ll"] for r in ok if method in r])
                J_lb = np.array([r["J_lb"] for r in recs])
                entry["bound_holds"] = int(np.sum(J_lb <= true_J + 1e-6))
        agg["methods"][method] = entry
    return agg


def run_benchmark(config: BenchConfig, workers: Optional[int] = None) -> BenchResult:
    """Simulate and fit ``config.episodes`` episodes; failures are recorded, not raised.

    Episodes are independent, each with its own seed stream, so results do
    not depend on ``workers``.
    """
    workers = workers or config.workers or default_workers()
    jobs = [(config, i, ss, fs) for i, (ss, fs) in enumerate(_episode_seeds(config))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    records = [r[0] for r in results]
    reports = {(r[0]["episode"], m): rep for r in results for m, rep in r[1].items()}
    return BenchResult(
        config=config,
        records=records,
        reports=reports,
        episodes=[r[2] for r in results],
        truths=[r[3] for r in results],
        aggregates=_aggregate(config, records),
    )
