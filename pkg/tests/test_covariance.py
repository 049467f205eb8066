import numpy as np
import pytest

from contextew import oracles
from contextew.core import EnvironmentSpec, FixedTheta, ProblemDims, UniformBox
from contextew.covariance import (BlockCovariance, CovarianceError, estimate_sigma, invert_block,
                                  invert_blocks, mahalanobis_stat, sandwich_check,
                                  second_moment_blocks)
from contextew.sampler import DEFAULT_CONFIG


def _unit_env(K):
    # d = 1, contexts identically 1 (a degenerate box)
    dims = ProblemDims(1, K, 100)
    return EnvironmentSpec(UniformBox([1.0], [1.0]), FixedTheta(np.zeros((K, 1))), dims)


@pytest.mark.parametrize("K", [2, 3])
def test_uniform_simplex_blocks(K, rng):
    # E[q_a^2] = 2/(K(K+1)): 1/3 at K = 2, 1/6 at K = 3
    env = _unit_env(K)
    sig = estimate_sigma(env, np.zeros((K, 1)), 100_000, DEFAULT_CONFIG, rng)
    target = oracles.uniform_simplex_second_moment(K)
    X = np.ones((100_000, 1))
    Q = rng.dirichlet(np.ones(K), 100_000)
    se = np.std(Q[:, 0] ** 2, ddof=1) / np.sqrt(100_000)
    assert np.all(np.abs(sig.blocks[:, 0, 0] - target) <= 3 * se)
    assert second_moment_blocks(X, Q)[:, 0, 0] == pytest.approx(np.full(K, target), abs=4 * se)


def test_independent_estimates_agree(default_env, rng):
    theta_eta = 3.0 * np.array([[0.5, 0.2], [-0.3, 0.4], [0.1, -0.6]])
    reps = [estimate_sigma(default_env, theta_eta, 100_000, DEFAULT_CONFIG, rng).blocks for _ in range(2)]
    # SE of each entry from a third estimate's per-sample spread
    X = default_env.draw_contexts(100_000, rng)
    from contextew.sampler import draw_policies
    Q = draw_policies(X, theta_eta, DEFAULT_CONFIG, rng)[0]
    per = np.einsum("na,ni,nj->naij", Q * Q, X, X)
    se = per.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
    # the difference of two independent estimates has entrywise SE sqrt(2) * se
    diff = np.linalg.norm(reps[0] - reps[1], ord=2, axis=(1, 2))
    assert np.all(diff < 5 * np.sqrt(2) * np.linalg.norm(se, ord=2, axis=(1, 2)))
    for b in reps[0]:
        assert np.linalg.eigvalsh(b)[0] > 0


def test_mahalanobis_examples():
    blocks = BlockCovariance(np.array([[[1 / 6]], [[1 / 6]]]), "sigma")
    assert mahalanobis_stat([0.5, 0.5], [1.0], blocks) == pytest.approx(3.0)
    assert mahalanobis_stat([0.5, 0.5], [0.0], blocks) == 0.0
    scaled = BlockCovariance(blocks.blocks * 4.0, "sigma")
    assert mahalanobis_stat([0.3, 0.7], [2.0], scaled) == pytest.approx(
        mahalanobis_stat([0.3, 0.7], [1.0], blocks))


def test_trace_identity(default_env, rng):
    theta_eta = 2.0 * np.array([[0.5, 0.2], [-0.3, 0.4], [0.1, -0.6]])
    sig = estimate_sigma(default_env, theta_eta, 200_000, DEFAULT_CONFIG, rng)
    from contextew.sampler import draw_policies
    X = default_env.draw_contexts(50_000, rng)
    Q = draw_policies(X, theta_eta, DEFAULT_CONFIG, rng)[0]
    w = np.einsum("ni,aij,nj->na", X, sig.inverse_blocks, X)
    est = oracles.summarize(np.sum(Q * Q * w, axis=1))
    assert abs(est.mean - 6.0) <= 3 * est.se + 6.0 * 0.01


def test_invert_block_examples(rng):
    assert invert_block(np.eye(3)) == pytest.approx(np.eye(3))
    assert invert_block(np.diag([2.0, 4.0])) == pytest.approx(np.diag([0.5, 0.25]))
    A = rng.normal(size=(4, 4))
    B = A @ A.T + 0.1 * np.eye(4)
    assert np.max(np.abs(B @ invert_block(B) - np.eye(4))) < 1e-8
    with pytest.raises(CovarianceError):
        invert_block(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(CovarianceError):
        invert_block(-np.eye(2))


def test_invert_block_jitter_on_singular():
    B = np.array([[1.0, 1.0], [1.0, 1.0]])
    inv = invert_block(B)
    assert np.all(np.isfinite(inv)) and np.allclose(inv, inv.T)
    out = invert_blocks(np.stack([np.eye(2), B]))
    assert out[0] == pytest.approx(np.eye(2))


def test_sandwich_examples(rng):
    A = rng.normal(size=(2, 2, 2))
    S = A @ np.swapaxes(A, 1, 2) + 0.5 * np.eye(2)
    sig = BlockCovariance(S, "sigma")
    assert sandwich_check(sig, BlockCovariance(S, "sigma_tilde")) == pytest.approx((1.0, 1.0))
    assert sandwich_check(sig, BlockCovariance(1.2 * S, "sigma_tilde")) == pytest.approx((1.2, 1.2))


def test_block_covariance_helpers():
    b = BlockCovariance(np.stack([np.eye(2), 2 * np.eye(2)]), "sigma")
    assert b.dense().shape == (4, 4) and b.dense()[2, 2] == 2.0
    assert b.is_symmetric()
    assert b.inverse().blocks[1] == pytest.approx(0.5 * np.eye(2))
    with pytest.raises(ValueError):
        BlockCovariance(np.eye(2), "sigma")
    with pytest.raises(ValueError):
        BlockCovariance(np.stack([np.eye(2)]), "other")


def test_estimate_sigma_needs_enough_samples(default_env, rng):
    with pytest.raises(ValueError):
        estimate_sigma(default_env, np.zeros((3, 2)), 5, DEFAULT_CONFIG, rng)
