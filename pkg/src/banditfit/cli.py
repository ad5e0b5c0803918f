"""Command-line front end: ``banditfit simulate | fit | bench | bound``.

Exit codes: 0 success, 2 usage or parse error, 3 the relaxed solver did not
converge (the report is still written), 4 fewer than 90% of benchmark
episodes succeeded.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import asdict

import click
import numpy as np

from banditfit import __version__
from banditfit.errors import InvalidInputError
from banditfit.formats import (
    bound_to_doc,
    dumps,
    episode_from_doc,
    episode_to_doc,
    params_from_doc,
    params_to_doc,
    read_doc,
    report_to_doc,
)
from banditfit.model import objective
from banditfit.pipeline import FitError, FitOptions, fit, lower_bound_only
from banditfit.relax import SolverOptions
from banditfit.sim import (
    BENCH_METHODS,
    SCHEMES,
    BenchConfig,
    episode_seeds,
    run_benchmark,
    simulate_configured,
)

EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_PARTIAL = 4

SUMMARY_NAME = "summary.tsv"


def _fail(message: str, code: int = EXIT_USAGE):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _emit(text: str, out):
    if out is None or out == "-":
        click.echo(text, nl=False)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _read_input(path: str) -> dict:
    try:
        if path == "-":
            return read_doc(sys.stdin.read(), is_text=True)
        return read_doc(path)
    except OSError as exc:
        _fail(f"cannot read {path}: {exc}")
    except InvalidInputError as exc:
        _fail(f"{path}: {exc}")


def _load_episode(path: str):
    doc = _read_input(path)
    try:
        return episode_from_doc(doc)
    except InvalidInputError as exc:
        _fail(f"{path}: {exc}")


def _range(ctx, param, value):
    if value is None:
        return None
    lo, hi = value
    if not lo <= hi:
        raise click.BadParameter("lower end exceeds upper end")
    return (lo, hi)


def _probs(ctx, param, value):
    if value is None:
        return None
    try:
        probs = tuple(float(x) for x in value.split(","))
    except ValueError:
        raise click.BadParameter("expected comma-separated probabilities")
    if any(not 0.0 <= x <= 1.0 for x in probs):
        raise click.BadParameter("probabilities must lie in [0, 1]")
    return probs


def _methods(ctx, param, value):
    methods = tuple(x.strip() for x in value.split(",") if x.strip())
    bad = [x for x in methods if x not in BENCH_METHODS]
    if bad or not methods:
        raise click.BadParameter(f"unknown methods {bad}; choose from {', '.join(BENCH_METHODS)}")
    return methods


def _solver(max_iters: int) -> SolverOptions:
    return SolverOptions(max_iters=max_iters)


def _options_doc(opts: FitOptions) -> dict:
    d = asdict(opts)
    d["solver"] = asdict(opts.solver)
    return d


@click.group()
@click.version_option(__version__, prog_name="banditfit")
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Fit forgetting Q-learning bandit models with certified lower bounds."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _bench_config(arms, trials, episodes, scheme, seed, alpha_range, beta_range,
                  alpha_act_range, beta_act_range, reward_probs, per_arm, **extra) -> BenchConfig:
    if reward_probs is not None and len(reward_probs) != arms:
        raise click.BadParameter(f"need {arms} reward probabilities", param_hint="--reward-probs")
    kw = dict(
        episodes=episodes,
        n=trials,
        m=arms,
        scheme=scheme,
        seed=seed,
        reward_probs=reward_probs,
        alpha_range=alpha_range or (0.0, 1.0),
        beta_range=beta_range,
        alpha_act_range=alpha_act_range or (0.0, 1.0),
        beta_act_range=beta_act_range or (0.0, 5.0),
        shared_arms=not per_arm,
    )
    kw.update(extra)
    return BenchConfig(**kw)


_sim_options = [
    click.option("--arms", type=click.IntRange(min=2), default=2, show_default=True),
    click.option("--trials", type=click.IntRange(min=1), default=200, show_default=True),
    click.option("--episodes", type=click.IntRange(min=1), default=1, show_default=True),
    click.option("--scheme", type=click.Choice(SCHEMES), default="reward", show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--alpha-range", nargs=2, type=click.FloatRange(0, 1), callback=_range,
                 help="Uniform range of true learning rates [default: 0 1]."),
    click.option("--beta-range", nargs=2, type=click.FloatRange(min=0), callback=_range,
                 help="Uniform range of true reward sensitivities [default: 0 5, or 0 10 with two subsignals]."),
    click.option("--alpha-act-range", nargs=2, type=click.FloatRange(0, 1), callback=_range,
                 help="Action-subsignal learning rates [default: 0 1]."),
    click.option("--beta-act-range", nargs=2, type=click.FloatRange(min=0), callback=_range,
                 help="Action-subsignal sensitivities [default: 0 5]."),
    click.option("--reward-probs", callback=_probs,
                 help="Comma-separated payout probabilities; drawn U[0,1] per episode if omitted."),
    click.option("--per-arm", is_flag=True, help="Draw true parameters separately for every arm."),
]


def _apply(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


@main.command()
@_apply(_sim_options)
@click.option("--out-dir", type=click.Path(file_okay=False), help="Write episode_NNNN.json files here.")
def simulate(arms, trials, episodes, scheme, seed, alpha_range, beta_range, alpha_act_range,
             beta_act_range, reward_probs, per_arm, out_dir):
    """Simulate agents and write episode files (true parameters go in a sidecar)."""
    try:
        config = _bench_config(arms, trials, episodes, scheme, seed, alpha_range, beta_range,
                               alpha_act_range, beta_act_range, reward_probs, per_arm)
    except InvalidInputError as exc:
        _fail(str(exc))
    if episodes > 1 and out_dir is None:
        _fail("--out-dir is required when simulating more than one episode")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for idx, (sim_ss, _) in enumerate(episode_seeds(config)):
        episode, truth, env = simulate_configured(config, sim_ss)
        spec = env.bandit_spec()
        sidecar = {
            "true_params": params_to_doc(truth),
            "reward_probs": list(env.reward_probs),
            "scheme": scheme,
            "seed": seed,
            "episode": idx,
        }
        text = dumps(episode_to_doc(episode, spec, sidecar))
        _emit(text, None if out_dir is None else os.path.join(out_dir, f"episode_{idx:04d}.json"))


_fit_options = [
    click.option("--lag-depth", type=click.IntRange(min=1), default=None,
                 help="Lag depth p of the relaxed problem [default: n]."),
    click.option("--eps-tilde", type=click.FloatRange(min=0, min_open=True), default=1e-5,
                 show_default=True, help="Entrywise certificate tolerance."),
    click.option("--tie-arms", is_flag=True, help="One (alpha, beta) per subsignal shared by all arms."),
    click.option("--max-iters", type=click.IntRange(min=1), default=50_000, show_default=True,
                 help="Relaxed solver iteration cap."),
]


@main.command("fit")
@click.argument("episode_file", type=click.Path(allow_dash=True))
@click.option("--method", type=click.Choice(["sequential", "direct"]), default="sequential",
              show_default=True)
@click.option("--restarts", "N", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--logspace-recovery", is_flag=True,
              help="Recover rows by log-space regression instead of multistart least squares.")
@click.option("--with-bound", is_flag=True, help="Also solve the relaxed problem for a direct fit.")
@click.option("--beta-high", type=click.FloatRange(min=0, min_open=True), default=5.0,
              show_default=True, help="Upper end of the uniform draw of initial sensitivities.")
@_apply(_fit_options)
@click.option("-o", "--out", type=click.Path(allow_dash=True), default="-", show_default=True)
def fit_cmd(episode_file, method, N, seed, logspace_recovery, with_bound, beta_high, lag_depth,
            eps_tilde, tie_arms, max_iters, out):
    """Fit one episode file (``-`` reads stdin) and write a report."""
    episode, spec = _load_episode(episode_file)
    if method == "direct" and (logspace_recovery or lag_depth is not None):
        _fail("--logspace-recovery and --lag-depth apply to the sequential method only")
    if method == "sequential" and logspace_recovery:
        method = "logspace"
    try:
        opts = FitOptions(p=lag_depth, N=N, eps_tilde=eps_tilde, seed=seed,
                          solver=_solver(max_iters), method=method, with_bound=with_bound,
                          tie_arms=tie_arms, beta_high=beta_high)
        opts.depth(episode.n)
    except InvalidInputError as exc:
        _fail(str(exc))
    try:
        report = fit(episode, spec, opts)
    except FitError as exc:
        _fail(str(exc), 1)
    _emit(dumps(report_to_doc(report, _options_doc(opts), __version__)), out)
    if not report.converged:
        click.echo("warning: relaxed solver did not converge", err=True)
        sys.exit(EXIT_NOT_CONVERGED)


@main.command()
@click.argument("episode_file", type=click.Path(allow_dash=True))
@click.option("--audit", "audit_file", type=click.Path(exists=True, dir_okay=False),
              help="Params or report file whose objective is compared to the bound.")
@_apply(_fit_options)
@click.option("-o", "--out", type=click.Path(allow_dash=True), default="-", show_default=True)
def bound(episode_file, audit_file, lag_depth, eps_tilde, tie_arms, max_iters, out):
    """Solve only the relaxed problem and report the lower bound."""
    episode, spec = _load_episode(episode_file)
    params = None
    if audit_file is not None:
        try:
            params = params_from_doc(read_doc(audit_file))
            params.check(spec)
        except (OSError, InvalidInputError) as exc:
            _fail(f"{audit_file}: {exc}")
    try:
        opts = FitOptions(p=lag_depth, eps_tilde=eps_tilde, solver=_solver(max_iters),
                          tie_arms=tie_arms)
        sol = lower_bound_only(episode, spec, opts)
    except InvalidInputError as exc:
        _fail(str(exc))
    J = None if params is None else objective(params, episode, spec)
    doc = bound_to_doc(sol, _options_doc(opts), __version__, params, J)
    _emit(dumps(doc), out)
    if not sol.converged:
        click.echo("warning: relaxed solver did not converge", err=True)
        sys.exit(EXIT_NOT_CONVERGED)


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return format(float(x), ".17g")


def summary_columns(config: BenchConfig) -> list:
    """Column names of the benchmark summary table, in order."""
    cols = ["episode", "status", "true_ll"]
    names = [f"{a}_{i}_{j}" for a in ("alpha", "beta") for i in range(config.k) for j in range(config.m)]
    for m in config.methods:
        cols += [f"{m}_ll", f"{m}_J_lb", f"{m}_gap", f"{m}_certified"]
        cols += [f"{m}_abserr_{nm}" for nm in names]
    return cols


def summary_rows(config: BenchConfig, records) -> list:
    rows = []
    for rec in records:
        row = [str(rec["episode"]), rec["status"], _fmt(rec["true_ll"])]
        for m in config.methods:
            r = rec.get(m)
            if r is None:
                row += ["NA"] * (4 + 2 * config.k * config.m)
                continue
            row += [_fmt(r["ll"]), _fmt(r["J_lb"]), _fmt(r["gap"]), _fmt(r["certified"])]
            row += [_fmt(v) for v in np.concatenate([r["alpha_err"].ravel(), r["beta_err"].ravel()])]
        rows.append(row)
    return rows


@main.command()
@_apply(_sim_options[:5])
@click.option("--methods", default="sequential,truncated,direct", show_default=True,
              callback=_methods, help=f"Comma-separated subset of {', '.join(BENCH_METHODS)}.")
@click.option("--truncated-p", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--restarts", "N", type=click.IntRange(min=1), default=10, show_default=True)
@_apply(_sim_options[5:])
@click.option("--eps-tilde", type=click.FloatRange(min=0, min_open=True), default=1e-5,
              show_default=True)
@click.option("--tie-arms", is_flag=True, help="Fit one (alpha, beta) per subsignal.")
@click.option("--beta-high", type=click.FloatRange(min=0, min_open=True), default=5.0,
              show_default=True, help="Upper end of the uniform draw of initial sensitivities.")
@click.option("--max-iters", type=click.IntRange(min=1), default=50_000, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Worker processes [default: $BANDITFIT_THREADS or 1].")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def bench(arms, trials, episodes, scheme, seed, methods, truncated_p, N, alpha_range, beta_range,
          alpha_act_range, beta_act_range, reward_probs, per_arm, eps_tilde, tie_arms, beta_high,
          max_iters, workers, out_dir):
    """Simulate and fit a batch; write summary.tsv and per-episode reports."""
    if truncated_p > trials:
        _fail("--truncated-p cannot exceed --trials")
    try:
        config = _bench_config(arms, trials, episodes, scheme, seed, alpha_range, beta_range,
                               alpha_act_range, beta_act_range, reward_probs, per_arm,
                               methods=methods, truncated_p=truncated_p, N=N, eps_tilde=eps_tilde,
                               tie_arms=tie_arms, beta_high=beta_high, solver=_solver(max_iters),
                               workers=workers)
    except InvalidInputError as exc:
        _fail(str(exc))
    result = run_benchmark(config)
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)
    lines = ["\t".join(summary_columns(config))]
    lines += ["\t".join(row) for row in summary_rows(config, result.records)]
    with open(os.path.join(out_dir, SUMMARY_NAME), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    fit_seeds = {rec["episode"]: rec["fit_seed"] for rec in result.records}
    for (idx, method), rep in sorted(result.reports.items()):
        opts = config.fit_options(method, fit_seeds[idx])
        doc = report_to_doc(rep, _options_doc(opts), __version__)
        path = os.path.join(out_dir, "reports", f"episode_{idx:04d}_{method}.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(doc))
    ok = result.aggregates["succeeded"]
    click.echo(f"{ok}/{episodes} episodes succeeded; summary in {os.path.join(out_dir, SUMMARY_NAME)}",
               err=True)
    if ok < 0.9 * episodes:
        sys.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    main()
