import math

import numpy as np
import pytest

from contextew import oracles
from contextew.sampler import (DEFAULT_CONFIG, SamplerConfig, SamplerError, density_unnormalized,
                               draw_policies, sample_batch, sample_exact, sample_hit_and_run,
                               sample_truncated, truncation_threshold)

HR = SamplerConfig(method="hit-and-run")


def test_density_examples(rng):
    q = rng.dirichlet(np.ones(4))
    assert density_unnormalized(q, np.zeros(4)) == 1.0
    c = np.array([0.3, -1.0, 2.0, 0.5])
    for a in range(4):
        assert density_unnormalized(np.eye(4)[a], c) == pytest.approx(math.exp(-c[a]))
    # normalized density is shift invariant
    z0 = math.exp(oracles_log_norm(c))
    z1 = math.exp(oracles_log_norm(c + 3.0))
    assert density_unnormalized(q, c) / z0 == pytest.approx(density_unnormalized(q, c + 3.0) / z1, rel=1e-12)


def oracles_log_norm(c):
    # log of the integral of exp(-<q, c>), referenced to the last cost
    return math.log(oracles.simplex_quadrature(c)) - c[-1]


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(method="gibbs")
    with pytest.raises(ValueError):
        SamplerConfig(hr_steps=10, hr_burnin=10)
    with pytest.raises(ValueError):
        SamplerConfig(clip_floor=0.3).check_k(4)
    with pytest.raises(ValueError):
        SamplerConfig(exact_max_k=4).check_k(5)


def test_backends_draw_identical_streams(backend):
    from contextew import _fallback
    C = np.random.default_rng(1).uniform(-4, 4, (200, 4))
    Q, _ = backend.sample_rows(C, 0.0, np.random.default_rng(9), 1e-10)
    R, _ = _fallback.sample_rows(C, 0.0, np.random.default_rng(9), 1e-10)
    assert np.max(np.abs(Q - R)) <= 1e-12
    assert np.allclose(Q.sum(axis=1), 1.0) and np.all(Q >= 0)


def test_backends_hit_and_run_identical(backend):
    from contextew import _fallback
    C = np.random.default_rng(2).uniform(-3, 3, (20, 3))
    Q = backend.hit_and_run_rows(C, 0.0, 300, np.random.default_rng(4))
    R = _fallback.hit_and_run_rows(C, 0.0, 300, np.random.default_rng(4))
    assert np.max(np.abs(Q - R)) <= 1e-10


def test_uniform_costs_give_uniform_means(backend, rng):
    n = 100_000 if backend.__name__.endswith("_kernels") else 5_000
    Q, _ = backend.sample_rows(np.zeros((n, 4)), 0.0, rng, 1e-10)
    est = oracles.summarize(Q)
    assert np.all(est.within(np.full(4, 0.25), 3.0))


def test_two_arm_mean(rng):
    Q = sample_batch(np.tile([1.0, 0.0], (100_000, 1)), DEFAULT_CONFIG, rng)
    target = (1 - 2 / math.e) / (1 - 1 / math.e)
    assert target == pytest.approx(0.41802, abs=1e-5)
    est = oracles.summarize(Q[:, 0])
    assert abs(est.mean - target) <= 3 * est.se


def test_three_arm_grid_chi_square(rng):
    c = np.array([2.0, 1.0, 0.0])
    Q = sample_batch(np.tile(c, (50_000, 1)), DEFAULT_CONFIG, rng)
    edges = np.linspace(0, 1, 11)
    P = oracles.triangle_cell_probabilities(c, edges)
    H = np.histogram2d(Q[:, 0], Q[:, 1], bins=[edges, edges])[0]
    mask = P.ravel() > 0
    assert oracles.chi_square_pvalue(H.ravel()[mask], P.ravel()[mask]) > 0.01


def test_hit_and_run_matches_exact_at_zero_costs(rng):
    C = np.zeros((10_000, 3))
    a = sample_batch(C, DEFAULT_CONFIG, rng)[:, 0]
    b = sample_batch(C, HR, rng)[:, 0]
    assert oracles.two_sample_ks(a, b) > 0.01


def test_hit_and_run_first_moments_k5(rng):
    c = np.array([1.5, -0.5, 2.0, 0.0, 0.7])
    C = np.tile(c, (4000, 1))
    e = oracles.summarize(sample_batch(C, DEFAULT_CONFIG, rng))
    h = oracles.summarize(sample_batch(C, SamplerConfig("hit-and-run", 600, 100), rng))
    se = np.sqrt(e.se ** 2 + h.se ** 2)
    assert np.all(np.abs(e.mean - h.mean) <= 4 * se)


@pytest.mark.parametrize("method", ["exact", "hit-and-run"])
def test_clipped_simplex_feasible(method, rng):
    floor = 0.05
    cfg = SamplerConfig(method, 200, 50, clip_floor=floor)
    Q = sample_batch(rng.uniform(-20, 20, (500, 4)), cfg, rng)
    assert np.all(Q >= floor - 1e-12)
    assert np.allclose(Q.sum(axis=1), 1.0)


def test_single_draw_helpers(rng):
    q = sample_exact([0.0, 1.0, 2.0], rng)
    h = sample_hit_and_run([0.0, 1.0, 2.0], SamplerConfig(hr_steps=50, hr_burnin=10), rng)
    for v in (q, h):
        assert v.shape == (3,) and v.sum() == pytest.approx(1.0)


def test_non_finite_costs_raise(rng):
    with pytest.raises(SamplerError):
        sample_batch(np.array([[np.nan, 0.0]]), DEFAULT_CONFIG, rng)


def test_extreme_costs_stay_on_simplex(rng):
    C = np.array([[500.0, 0.0, 0.0], [0.0, 1e-12, 2e-12], [-300.0, 300.0, 0.0]])
    Q = sample_batch(np.repeat(C, 100, axis=0), DEFAULT_CONFIG, rng)
    assert np.all(np.isfinite(Q)) and np.allclose(Q.sum(axis=1), 1.0) and np.all(Q >= 0)


def test_truncation_infinite_gamma_never_rejects(rng):
    X = rng.uniform(-0.5, 0.5, (2000, 2))
    theta = rng.normal(size=(3, 2))
    inv = np.broadcast_to(np.eye(2) * 50.0, (3, 2, 2)).copy()
    Q, st, rej, forced = draw_policies(X, theta, DEFAULT_CONFIG, rng, inv, np.inf, 100)
    assert rej.sum() == 0 and not forced.any()


def test_truncation_accepts_only_inside_event(rng):
    x = np.array([0.6, 0.2])
    inv = np.broadcast_to(np.eye(2) * 10.0, (3, 2, 2)).copy()
    thr = 0.8
    for _ in range(200):
        draw = sample_truncated(np.zeros(3), inv, x, thr, 1000, rng)
        if not draw.forced:
            assert draw.statistic <= thr
            w = sum(draw.q[a] ** 2 * x @ inv[a] @ x for a in range(3))
            assert w == pytest.approx(draw.statistic)


def test_truncation_forced_accept_flag(rng):
    inv = np.broadcast_to(np.eye(2), (2, 2, 2)).copy()
    draw = sample_truncated(np.zeros(2), inv, np.array([0.5, 0.5]), 1e-9, 5, rng)
    assert draw.forced and draw.rejections == 5


def test_truncation_threshold():
    assert truncation_threshold(2, 3, 4.0) == 96.0


def test_backends_hit_and_run_bitwise(backend):
    # row 37 of this batch once exposed a sin/cos -> sincos fusion in the compiled build
    from contextew import _fallback
    C = np.random.default_rng(0).uniform(-3, 3, (100, 3))
    Q = backend.hit_and_run_rows(C, 0.0, 200, np.random.Generator(np.random.Philox(3)))
    R = _fallback.hit_and_run_rows(C, 0.0, 200, np.random.Generator(np.random.Philox(3)))
    assert np.array_equal(Q, R)
