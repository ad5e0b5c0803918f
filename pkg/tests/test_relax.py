import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from banditfit import (
    BanditSpec,
    Params,
    RelaxedProblem,
    SolverOptions,
    objective,
    project_row_monotone_nonneg,
    relaxed_objective_and_gradient,
    simulate_episode,
    solve_relaxed,
)
from banditfit.errors import InvalidInputError
from banditfit.lags import is_relaxed_feasible
from banditfit.sim import EnvSpec
from conftest import random_instance


def brute_force_projection(v):
    """Projection onto {z_0 >= ... >= z_{p-1} >= 0} by enumerating active sets."""
    v = np.asarray(v, dtype=float)
    p = v.size
    A = np.zeros((p, p))
    for j in range(p - 1):
        A[j, j], A[j, j + 1] = 1.0, -1.0
    A[p - 1, p - 1] = 1.0
    best, best_d = None, np.inf
    for r in range(p + 1):
        for S in itertools.combinations(range(p), r):
            if S:
                As = A[list(S)]
                z = v - As.T @ np.linalg.solve(As @ As.T, As @ v)
            else:
                z = v.copy()
            if np.all(A @ z >= -1e-12):
                d = np.sum((z - v) ** 2)
                if d < best_d:
                    best, best_d = z, d
    return best


def test_projection_examples():
    np.testing.assert_allclose(project_row_monotone_nonneg([2, 1, -1]), [2, 1, 0])
    np.testing.assert_allclose(project_row_monotone_nonneg([1, 2]), [1.5, 1.5])
    np.testing.assert_allclose(project_row_monotone_nonneg([1, 3, 2]), [2, 2, 2])


def test_brute_force_oracle_on_examples():
    np.testing.assert_allclose(brute_force_projection([1, 2]), [1.5, 1.5])
    np.testing.assert_allclose(brute_force_projection([1, 3, 2]), [2, 2, 2])


def test_projection_matches_oracle_suite():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        v = rng.normal(scale=2.0, size=int(rng.integers(1, 7)))
        np.testing.assert_allclose(
            project_row_monotone_nonneg(v), brute_force_projection(v), atol=1e-8
        )


@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_projection_idempotent_and_feasible(v):
    z = project_row_monotone_nonneg(v)
    assert is_relaxed_feasible(z[None, :])
    np.testing.assert_allclose(project_row_monotone_nonneg(z), z, atol=1e-9)


def test_projection_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        project_row_monotone_nonneg([1.0, np.nan])


def _prob(seed, m=3, n=15, p=8, k=2, tie=False):
    rng = np.random.default_rng(seed)
    ep, spec, _ = random_instance(rng, m, n, k, w=rng.normal(size=k))
    return RelaxedProblem.from_episode(ep, spec, p, tie), rng


def test_zero_kernel_objective_is_uniform():
    prob, _ = _prob(0)
    J, _ = relaxed_objective_and_gradient([np.zeros((3, 8))] * 2, prob)
    assert J == pytest.approx(15 * math.log(3), abs=1e-12)


def test_zero_weights_zero_gradient(rng):
    ep, _, _ = random_instance(rng, 3, 10, 2)
    spec = BanditSpec(3, 2, [0.0, 0.0])
    prob = RelaxedProblem.from_episode(ep, spec, 5)
    _, grads = relaxed_objective_and_gradient([rng.random((3, 5))] * 2, prob)
    assert all(not g.any() for g in grads)


@pytest.mark.parametrize("seed", range(15))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(2, 5)), int(rng.integers(2, 21))
    p, k = int(rng.integers(1, min(n, 10) + 1)), int(rng.integers(1, 3))
    ep, spec, _ = random_instance(rng, m, n, k, w=rng.normal(size=k))
    prob = RelaxedProblem.from_episode(ep, spec, p)
    Gs = [rng.uniform(0, 2, (m, p)) for _ in range(k)]
    _, grads = relaxed_objective_and_gradient(Gs, prob)
    h = 1e-5
    fd = []
    for i in range(k):
        gi = np.zeros((m, p))
        for idx in np.ndindex(m, p):
            up = [G.copy() for G in Gs]
            dn = [G.copy() for G in Gs]
            up[i][idx] += h
            dn[i][idx] -= h
            gi[idx] = (
                relaxed_objective_and_gradient(up, prob)[0]
                - relaxed_objective_and_gradient(dn, prob)[0]
            ) / (2 * h)
        fd.append(gi)
    a, b = np.concatenate([g.ravel() for g in grads]), np.concatenate([g.ravel() for g in fd])
    assert np.linalg.norm(a - b) <= 1e-5 * max(1.0, np.linalg.norm(b))


def test_solver_history_monotone_and_feasible():
    prob, _ = _prob(3, m=2, n=60, p=60, k=1)
    sol = solve_relaxed(prob)
    assert sol.converged
    assert np.all(np.diff(sol.history) <= 1e-12 * max(1.0, abs(sol.history[0])))
    assert all(is_relaxed_feasible(G) for G in sol.Gs)


def test_two_starts_agree():
    prob, rng = _prob(5, m=2, n=40, p=40, k=1)
    a = solve_relaxed(prob)
    G0 = [np.sort(rng.uniform(0, 3, (2, 40)), axis=1)[:, ::-1]]
    b = solve_relaxed(prob, G0=G0)
    assert abs(a.J_lb - b.J_lb) <= 1e-6


def test_solver_is_deterministic():
    prob, _ = _prob(6)
    a, b = solve_relaxed(prob), solve_relaxed(prob)
    assert a.J_lb == b.J_lb
    np.testing.assert_array_equal(a.Gs[0], b.Gs[0])


def test_bound_on_random_choice_data():
    env = EnvSpec((0.3, 0.7))
    rng = np.random.default_rng(9)
    ep = simulate_episode(env, Params.shared(0.0, 1.0, 2), 100, rng)
    sol = solve_relaxed(RelaxedProblem.from_episode(ep, env.bandit_spec(), 20))
    assert sol.J_lb <= 100 * math.log(2) + 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_relaxation_dominates_feasible_params(seed):
    rng = np.random.default_rng(seed)
    ep, spec, _ = random_instance(rng, 2, 50)
    sol = solve_relaxed(RelaxedProblem.from_episode(ep, spec))
    for _ in range(20):
        params = Params(rng.uniform(0, 1, (1, 2)), rng.uniform(0, 5, (1, 2)))
        assert objective(params, ep, spec) >= sol.J_lb - 1e-6


def test_tied_kernel_rows_are_shared_and_bound_weaker():
    prob, _ = _prob(7, m=3, n=40, p=40, k=1)
    tied = RelaxedProblem.from_parts(prob.Y, prob.stacks, prob.w, tie_arms=True)
    a, b = solve_relaxed(prob), solve_relaxed(tied)
    G = b.Gs[0]
    np.testing.assert_array_equal(G, np.repeat(G[:1], 3, axis=0))
    assert b.J_lb >= a.J_lb - 1e-6


def test_matches_conic_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(11)
    ep, spec, _ = random_instance(rng, 2, 40, k=2, w=[1.0, 0.5])
    p = 12
    prob = RelaxedProblem.from_episode(ep, spec, p)
    sol = solve_relaxed(prob)
    Gv = [cp.Variable((2, p)) for _ in range(2)]
    cols = []
    for j in range(2):
        cols.append(sum(spec.w[i] * (prob.arm_mats[i, j] @ Gv[i][j]) for i in range(2)))
    X = cp.vstack(cols).T
    obj = cp.sum(cp.log_sum_exp(X, axis=1)) - cp.sum(cp.multiply(X, prob.Y))
    cons = []
    for G in Gv:
        cons += [G[:, -1] >= 0, G[:, :-1] >= G[:, 1:]]
    cp.Problem(cp.Minimize(obj), cons).solve(solver=cp.CLARABEL)
    # score the conic optimum after projecting it onto the exact feasible set
    ref = prob.loss(np.stack([project_rows_safe(G.value) for G in Gv]))
    assert sol.J_lb <= ref + 1e-5
    assert abs(sol.J_lb - ref) <= 1e-4


def project_rows_safe(G):
    from banditfit.relax import project_rows

    return project_rows(np.asarray(G, dtype=float))


def test_solver_options_validation():
    with pytest.raises(InvalidInputError):
        SolverOptions(backtrack=1.5)
    with pytest.raises(InvalidInputError):
        SolverOptions(max_iters=0)
