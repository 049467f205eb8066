import numpy as np
import pytest

from contextew.algorithms import (ContextEW, LearnerConfig, LearnerError, LinExp3, UniformLearner,
                                  linexp3_default_eta, linexp3_policy, make_learner, with_mode)
from contextew.core import EnvironmentSpec, FixedTheta, ProblemDims, UniformBox, evaluate_loss
from contextew.rng import Streams


def _play(env, config, rounds, seed=0):
    streams = Streams(seed)
    learner = make_learner(env.dims, env, config, streams)
    out = []
    actions = []
    for t in range(1, rounds + 1):
        theta = env.theta(t, actions)
        x = env.draw_context(streams.get(t, "context"))
        a = learner.act(x)
        learner.feed(evaluate_loss(x, theta, a))
        actions.append(a)
        out.append(learner.round_info())
    return learner, actions, out


def test_round_one_is_uniform(default_env):
    cfg = LearnerConfig(S=100, sandwich_diagnostics=False)
    counts = np.zeros(3)
    for seed in range(1500):
        learner = ContextEW(default_env.dims, default_env, cfg, Streams(seed))
        assert np.all(learner.state.cumulative == 0.0)
        counts[learner.act(np.array([0.3, 0.1]))] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 1 / 3) <= 4 * np.sqrt(2 / 9 / counts.sum()))


def test_infinite_gamma_never_rejects(default_env):
    cfg = LearnerConfig(S=300, gamma=float("inf"))
    _, _, infos = _play(default_env, cfg, 40)
    assert all(i.rejections == 0 and not i.forced for i in infos)


def test_truncation_holds_on_accepted_draws(default_env):
    learner, _, infos = _play(default_env, LearnerConfig(S=300), 40, seed=3)
    for i in infos:
        assert i.forced or i.diagnostics["statistic"] <= learner.threshold


@pytest.mark.parametrize("mode", ["contextew-second", "linexp3", "uniform"])
def test_determinism(default_env, mode):
    cfg = with_mode(LearnerConfig(S=200), mode)
    a1 = _play(default_env, cfg, 25, seed=9)[1]
    a2 = _play(default_env, cfg, 25, seed=9)[1]
    a3 = _play(default_env, cfg, 25, seed=10)[1]
    assert a1 == a2
    assert a1 != a3


def test_eta_schedule_monotone(default_env):
    learner, _, infos = _play(default_env, LearnerConfig(S=200), 60, seed=1)
    etas = np.array([i.eta for i in infos])
    assert np.all(np.diff(etas) <= 0)
    assert etas[0] > 0


def test_uniform_learner_frequencies(default_env):
    _, actions, infos = _play(default_env, LearnerConfig(mode="uniform"), 6000, seed=4)
    freq = np.bincount(actions, minlength=3) / len(actions)
    assert np.all(np.abs(freq - 1 / 3) <= 4 * np.sqrt(2 / 9 / len(actions)))
    assert all(i.eta == 0.0 for i in infos)


def test_linexp3_full_exploration_is_uniform(rng):
    pi = linexp3_policy(rng.normal(size=(50, 2)), rng.normal(size=(3, 2)), 5.0, 1.0)
    assert np.allclose(pi, 1 / 3)
    pi2 = linexp3_policy(rng.normal(size=(50, 2)), rng.normal(size=(3, 2)), 5.0, 0.2)
    assert np.allclose(pi2.sum(axis=1), 1.0)
    assert pi2.min() >= 0.2 / 3 - 1e-15


def test_linexp3_default_eta():
    dims = ProblemDims(2, 3, 1000)
    assert linexp3_default_eta(dims) == pytest.approx(np.sqrt(np.log(3) / (3 * 2 * 3 * 1000)))


def test_linexp3_runs(default_env):
    learner, _, infos = _play(default_env, LearnerConfig(mode="linexp3", S=300), 20)
    assert isinstance(learner, LinExp3)
    assert all(i.diagnostics["variance_proxy_max"] > 0 for i in infos)


def test_first_order_needs_nonnegative(default_env):
    with pytest.raises(LearnerError):
        ContextEW(default_env.dims, default_env, LearnerConfig(mode="contextew-first"), Streams(0))
    dims = ProblemDims(2, 2, 200)
    env = EnvironmentSpec(UniformBox([0.1, 0.0], [0.5, 0.5]),
                          FixedTheta(np.array([[0.2, 0.1], [0.5, 0.3]])), dims, nonnegative=True)
    learner, actions, infos = _play(env, LearnerConfig(mode="contextew-first", S=200), 20)
    assert np.all(learner.m == 0.0)
    assert len(actions) == 20


def test_resampling_rejects_negative_loss(default_env):
    learner = make_learner(default_env.dims, default_env,
                           LearnerConfig(mode="resampling", mgr_max_M=2,
                                         mgr_lambda_diagnostics=False), Streams(0))
    learner.act(np.array([0.1, 0.1]))
    with pytest.raises(LearnerError):
        learner.feed(-0.5)


def test_act_feed_protocol(default_env):
    learner = UniformLearner(default_env.dims, default_env, LearnerConfig(mode="uniform"), Streams(0))
    with pytest.raises(LearnerError):
        learner.feed(0.0)
    learner.act(np.zeros(2))
    with pytest.raises(LearnerError):
        learner.act(np.zeros(2))


def test_bad_config():
    with pytest.raises(ValueError):
        LearnerConfig(mode="nope")
    with pytest.raises(ValueError):
        LearnerConfig(linexp3_explore=0.0)
