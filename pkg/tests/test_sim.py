import numpy as np
import pytest
from scipy.stats import chisquare

from banditfit import Params, objective, one_hot, policy_probs, simulate_episode, value_trajectory
from banditfit.errors import InvalidInputError
from banditfit.sim import BenchConfig, EnvSpec, draw_params, run_benchmark


def test_zero_learning_rate_agent_is_uniform():
    env = EnvSpec((0.9, 0.1, 0.5))
    ep = simulate_episode(env, Params.shared(0.0, 3.0, 3), 2000, np.random.default_rng(1))
    counts = np.bincount(ep.actions, minlength=3)
    assert chisquare(counts).pvalue > 0.01


def test_agent_exploits_the_paying_arm():
    env = EnvSpec((1.0, 0.0))
    ep = simulate_episode(env, Params.shared(0.5, 8.0, 2), 400, np.random.default_rng(2))
    assert np.mean(ep.actions[-100:] == 0) > 0.9


def test_action_signal_marks_previous_choice():
    env = EnvSpec((0.5, 0.5, 0.5), "reward+action")
    truth = Params(np.full((2, 3), 0.4), np.full((2, 3), 2.0))
    ep = simulate_episode(env, truth, 50, np.random.default_rng(3))
    assert ep.k == 2
    u_act = ep.signals[1]
    assert not u_act[0].any()
    np.testing.assert_array_equal(u_act[1:], one_hot(ep.actions[:-1], 3))
    # a reward can only come from the arm that was chosen
    assert np.all(ep.signals[0] <= u_act)


def test_replay_reproduces_sampling_probabilities():
    env = EnvSpec((0.2, 0.9), "reward+action")
    truth = Params([[0.3, 0.6], [0.9, 0.1]], [[4.0, 2.0], [1.0, 3.0]])
    ep, probs = simulate_episode(env, truth, 200, np.random.default_rng(4), return_probs=True)
    X = value_trajectory(truth, ep, env.bandit_spec())
    replay = np.array([policy_probs(x) for x in X])
    np.testing.assert_array_equal(replay, probs)


def test_simulation_is_seeded():
    env = EnvSpec((0.3, 0.6))
    a = simulate_episode(env, Params.shared(0.5, 2.0, 2), 80, np.random.default_rng(5))
    b = simulate_episode(env, Params.shared(0.5, 2.0, 2), 80, np.random.default_rng(5))
    assert a == b


def test_shape_checks():
    with pytest.raises(InvalidInputError):
        simulate_episode(EnvSpec((0.3, 0.6), "reward+action"), Params.shared(0.5, 2.0, 2), 5,
                         np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        EnvSpec((0.3,))
    with pytest.raises(InvalidInputError):
        BenchConfig(methods=("nope",))


def test_draw_params_ranges():
    cfg = BenchConfig(m=4, scheme="reward+action", shared_arms=False)
    p = draw_params(cfg, np.random.default_rng(0))
    assert p.alpha.shape == (2, 4)
    assert np.all(p.beta[0] <= 10) and np.all(p.beta[1] <= 5)
    shared = draw_params(BenchConfig(m=3), np.random.default_rng(0))
    assert np.all(shared.alpha == shared.alpha[0, 0])


@pytest.fixture(scope="module")
def small_batch():
    cfg = BenchConfig(episodes=8, n=80, methods=("sequential", "truncated", "direct"), seed=11)
    return cfg, run_benchmark(cfg, workers=1)


def test_benchmark_records(small_batch):
    cfg, res = small_batch
    assert len(res.records) == 8
    assert res.aggregates["succeeded"] == 8
    for rec, ep, truth in zip(res.records, res.episodes, res.truths):
        true_J = objective(truth, ep, _spec(ep))
        assert rec["true_ll"] == pytest.approx(-true_J)
        seq = rec["sequential"]
        assert seq["J_lb"] <= true_J + 1e-6
        assert seq["gap"] >= 0 and np.isfinite(rec["truncated"]["gap"])
        assert rec["truncated"]["lb_truncated"]
    assert res.aggregates["methods"]["sequential"]["bound_holds"] == 8


def _spec(ep):
    from banditfit import BanditSpec

    return BanditSpec(ep.m, ep.k)


def test_benchmark_independent_of_workers(small_batch):
    cfg, res = small_batch
    par = run_benchmark(cfg, workers=2)
    for a, b in zip(res.records, par.records):
        assert a["sequential"]["J_ub"] == b["sequential"]["J_ub"]
        assert a["direct"]["J_ub"] == b["direct"]["J_ub"]
