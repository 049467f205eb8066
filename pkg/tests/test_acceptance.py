"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned.

The long runs (criteria 8, 9 and 11) take the bulk of the time; every run is
seeded, so the outcome is reproducible.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from contextew import harness, oracles, zcalc
from contextew.algorithms import LearnerConfig, make_learner, with_mode
from contextew.core import evaluate_loss
from contextew.estimators import ghost_identity_check, unbiasedness_check
from contextew.rates import default_gamma
from contextew.rng import Streams
from contextew.sampler import draw_policies, truncation_threshold
from contextew.covariance import sandwich_check

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REFERENCE_ROUNDS = {"early": 10, "mid": 2500, "late": 9000}
SEEDS = 20


def _config(name):
    return harness.load_config(CONFIGS / name)


def _as_mode(cfg, mode):
    return replace(cfg, mode=mode, learner=with_mode(cfg.learner, mode))


def _runs(cfg, hook=None):
    return [harness.run_replication(cfg, r, hook) for r in range(SEEDS)]


def _mean_regret(traces, t):
    return float(np.mean([tr.cum_regret[t - 1] for tr in traces]))


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def reference():
    """Default environment run; frozen states at early, mid and late rounds."""
    cfg = _config("default.ini")
    frozen = {}

    def hook(learner, t, actions):
        for label, r in REFERENCE_ROUNDS.items():
            if t == r:
                theta = cfg.env.theta(t + 1, actions)
                frozen[label] = {
                    "own": learner.freeze(theta),
                    "1e5": learner.freeze(theta, S=100_000),
                    "1e6": learner.freeze(theta, S=1_000_000),
                }

    trace = harness.run_replication(cfg, 0, hook)
    return cfg, trace, frozen


@pytest.fixture(scope="module")
def regret_trend():
    cfg = _config("regret_trend.ini")
    return cfg, _runs(cfg), _runs(_as_mode(cfg, "uniform"))


@pytest.fixture(scope="module")
def first_order():
    low, matched = _config("first_order_low.ini"), _config("first_order_matched.ini")
    return low, _runs(low), matched, _runs(matched)


@pytest.fixture(scope="module")
def resampling():
    cfg = _config("resampling.ini")
    marks = {t for _, t in harness.checkpoints(cfg.dims.T)}
    bias = {}

    def hook(learner, t, actions):
        if learner.streams.replication == 0 and t + 1 in marks:
            theta = cfg.env.theta(t + 1, actions)
            rng = learner.streams.get(t + 1, "oracle")
            bias[t + 1] = learner.bias_check(theta, 100_000, 2000, rng)

    # round r is frozen right after round r - 1, so round T is checked too
    traces = _runs(cfg, hook)
    return cfg, traces, _runs(_as_mode(cfg, "uniform")), bias


# ---------------------------------------------------------------- criteria

def test_criterion_01_z_exactness(acceptance):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, fallbacks, count = 0.0, 0, 0
    for K in (2, 3, 4, 5):
        for i in range(200):
            c = harness.random_costs(K, rng, scale=5.0, tie=(i % 2 == 1))
            z, fb = zcalc.z_value(c)
            zq = oracles.simplex_quadrature(c, 1.0, 1e-10)
            worst = max(worst, abs(z - zq) / zq)
            fallbacks += int(fb)
            count += 1
    elapsed = time.perf_counter() - start
    acceptance.check(1, "Z partial fractions vs quadrature", worst <= 1e-6 and elapsed < 120,
                     f"vectors={count} max rel={worst:.2e} stable fallbacks={fallbacks} "
                     f"time={elapsed:.1f}s")


def test_criterion_02_exact_sampler(acceptance):
    results = harness.sample_test((2, 3, 4), vectors=10, n=50_000, seed=2024, alpha=0.01)
    failed = [r.line() for r in results if not r.passed]
    pmin = min(float(r.detail.split("p=")[1].split()[0]) for r in results)
    acceptance.check(2, "exact sampler marginals and exact vs hit-and-run", not failed,
                     f"tests={len(results)} failed={len(failed)} min p={pmin:.4f} {failed}")


def test_criterion_03_unbiasedness(acceptance, reference):
    cfg, _, frozen = reference
    res0 = unbiasedness_check(frozen["mid"]["1e6"], 100_000, np.random.default_rng(303))

    m = np.random.default_rng(31).uniform(-0.3, 0.3, (cfg.dims.K, cfg.dims.d))
    lcfg = replace(cfg.learner, optimistic=m)
    streams = Streams(cfg.seed, 7)
    learner = make_learner(cfg.dims, cfg.env, lcfg, streams)
    actions = []
    for t in range(1, 501):
        theta = cfg.env.theta(t, actions)
        x = cfg.env.draw_context(streams.get(t, "context"))
        a = learner.act(x)
        learner.feed(evaluate_loss(x, theta, a))
        actions.append(a)
    state = learner.freeze(cfg.env.theta(501, actions), S=1_000_000)
    res1 = unbiasedness_check(state, 100_000, np.random.default_rng(304))
    z0, z1 = np.abs(res0["z"]).max(), np.abs(res1["z"]).max()
    acceptance.check(3, "estimator unbiased within 4 SE (m = 0 and random m)",
                     res0["pass"] and res1["pass"], f"max |z| m=0: {z0:.2f}, random m: {z1:.2f}")


def test_criterion_04_truncation_statistic(acceptance, reference):
    cfg, trace, frozen = reference
    d, K = cfg.dims.d, cfg.dims.K
    threshold = truncation_threshold(d, K, default_gamma(cfg.dims))
    rng = np.random.default_rng(404)
    st = frozen["mid"]["1e6"]
    X = cfg.env.draw_contexts(100_000, rng)
    _, stat, _, _ = draw_policies(X, st.theta_eta, st.cfg, rng, st.sigma.inverse_blocks)
    rel = abs(stat.mean() / (d * K) - 1.0)
    rates = []
    for label in REFERENCE_ROUNDS:
        own = frozen[label]["own"]
        X = cfg.env.draw_contexts(100_000, rng)
        _, s, _, _ = draw_policies(X, own.theta_eta, own.cfg, rng, own.sigma.inverse_blocks)
        rates.append(float(np.mean(s > threshold)))
    run_rate = float(np.sum(trace.rejections)) / (np.sum(trace.rejections) + cfg.dims.T)
    forced = int(np.sum(trace.forced))
    ok = rel <= 0.02 and max(rates) < 0.01 and run_rate < 0.01 and forced == 0
    acceptance.check(4, "truncation statistic mean dK and rejection rate", ok,
                     f"mean={stat.mean():.4f} dK={d * K} rel={rel:.4f} rejection rates "
                     f"frozen={rates} run={run_rate:.2e} forced={forced}")


def test_criterion_05_sandwich(acceptance, reference):
    _, _, frozen = reference
    margins = {label: sandwich_check(f["1e5"].sigma, f["1e5"].sigma_tilde)
               for label, f in frozen.items()}
    ok = all(0.70 <= lo and hi <= 1.40 for lo, hi in margins.values())
    detail = " ".join(f"{k}=[{lo:.4f}, {hi:.4f}]" for k, (lo, hi) in margins.items())
    acceptance.check(5, "matrix sandwich margins inside [0.70, 1.40]", ok, detail)


def test_criterion_06_mgr(acceptance):
    results = harness.mgr_test(d=2, K=2, epsilon=0.1, repeats=4000, seed=7)
    acceptance.check(6, "MGR mean identity, cov_norm1, theorem accuracy",
                     all(r.passed for r in results), "; ".join(r.line() for r in results))


def test_criterion_07_eta_monotone(acceptance, reference, regret_trend, first_order, resampling):
    runs = {"second-order": [reference[1]] + regret_trend[1],
            "first-order": first_order[1] + first_order[3],
            "resampling": resampling[1]}
    bad = {k: sum(int(np.any(np.diff(tr.etas) > 0)) for tr in v) for k, v in runs.items()}
    counts = {k: len(v) for k, v in runs.items()}
    acceptance.check(7, "eta non-increasing in every run", sum(bad.values()) == 0,
                     f"runs={counts} violating={bad}")


def test_criterion_08_regret_trend(acceptance, regret_trend):
    cfg, ctx, uni = regret_trend
    T = cfg.dims.T
    r_T, r_q = _mean_regret(ctx, T), _mean_regret(ctx, T // 4)
    u_T = _mean_regret(uni, T)
    ratio, frac = r_T / r_q, r_T / u_T
    forced = int(sum(np.sum(tr.forced) for tr in ctx))
    acceptance.check(8, "R(T)/R(T/4) <= 2.5 and regret <= 1/3 of uniform",
                     ratio <= 2.5 and frac <= 1.0 / 3.0,
                     f"R(T/4)={r_q:.1f} R(T)={r_T:.1f} ratio={ratio:.3f} uniform={u_T:.1f} "
                     f"fraction={frac:.3f} forced={forced}")


def test_criterion_09_first_order(acceptance, first_order):
    low, low_runs, matched, matched_runs = first_order
    T = low.dims.T
    L_low = float(np.mean([tr.comparator.sum() for tr in low_runs]))
    L_matched = float(np.mean([tr.comparator.sum() for tr in matched_runs]))
    r_low, r_matched = _mean_regret(low_runs, T), _mean_regret(matched_runs, T)
    ratio = r_low / r_matched
    acceptance.check(9, "first-order regret on L* <= 10 is <= 10% of matched",
                     L_low <= 10 and ratio <= 0.10,
                     f"L*_low={L_low:.2f} L*_matched={L_matched:.1f} regret low={r_low:.1f} "
                     f"matched={r_matched:.1f} ratio={ratio:.3f}")


def test_criterion_10_ghost_identity(acceptance, reference):
    _, _, frozen = reference
    out = {label: ghost_identity_check(f["1e6"], 100_000, np.random.default_rng(1000 + i))
           for i, (label, f) in enumerate(frozen.items())}
    detail = " ".join(f"{k}: {g['left'].mean:.5f}+-{1.96 * g['left'].se:.5f} vs "
                      f"{g['right'].mean:.5f}+-{1.96 * g['right'].se:.5f}" for k, g in out.items())
    acceptance.check(10, "ghost identity 95% CIs overlap", all(g["overlap"] for g in out.values()),
                     detail)


def test_criterion_11_resampling(acceptance, resampling):
    cfg, traces, uni, bias = resampling
    T, d, eps = cfg.dims.T, cfg.dims.d, cfg.learner.mgr_epsilon
    r, u = _mean_regret(traces, T), _mean_regret(uni, T)
    viol = sum(int(np.sum(np.array(tr.diagnostic("sigma_plus_norm"))
                          > np.array(tr.diagnostic("sigma_plus_bound")) * (1 + 1e-12)))
               for tr in traces)
    bias_ok = all(np.all(np.abs(est.mean) <= d * eps + 4 * est.se) for est, _ in bias.values())
    bdetail = " ".join(f"t={t}: |bias|={np.abs(est.mean).max():.4f}+-{est.se.max():.4f} N={p.N}"
                       for t, (est, p) in sorted(bias.items()))
    acceptance.check(11, "resampling beats uniform, cov_norm1 every round, bias <= d eps + 4 SE",
                     r < u and viol == 0 and bias_ok and len(bias) == 3,
                     f"regret={r:.1f} uniform={u:.1f} cov_norm1 violations={viol} {bdetail}")


def test_criterion_12_linexp3_variance(acceptance):
    cfg = _config("linexp3_skewed.ini")
    trace = harness.run_replication(cfg, 0)
    peak = float(np.max(trace.diagnostic("variance_proxy_max")))
    ceiling = truncation_threshold(cfg.dims.d, cfg.dims.K, default_gamma(cfg.dims))
    acceptance.check(12, "LinExp3 variance proxy >= 10x the dK gamma^2 ceiling",
                     peak >= 10 * ceiling,
                     f"max x'S^-1x={peak:.4g} ceiling={ceiling:.4g} ratio={peak / ceiling:.2f}")


def test_criterion_13_determinism(acceptance, tmp_path):
    files = sorted(CONFIGS.glob("*.ini"))
    diffs = []
    for f in files:
        cfg = harness.load_config(f)
        cfg = replace(cfg, dims=replace(cfg.dims, T=min(cfg.dims.T, 300)),
                      replications=2, workers=None)
        cfg = replace(cfg, env=replace(cfg.env, dims=cfg.dims))
        for name, workers in (("a", 1), ("b", 2)):
            harness.run(replace(cfg, output=str(tmp_path / f.stem / name)), workers=workers)
        for out in sorted((tmp_path / f.stem / "a").iterdir()):
            if out.read_bytes() != (tmp_path / f.stem / "b" / out.name).read_bytes():
                diffs.append(f"{f.stem}/{out.name}")
    full = _config("default.ini")
    for name in ("a", "b"):
        harness.run(replace(full, output=str(tmp_path / "full" / name)), workers=1)
    for out in sorted((tmp_path / "full" / "a").iterdir()):
        if out.read_bytes() != (tmp_path / "full" / "b" / out.name).read_bytes():
            diffs.append(f"default-full/{out.name}")
    acceptance.check(13, "byte-identical CSVs on re-run", not diffs,
                     f"configs={len(files)} plus full default run, differing={diffs}")


def _tail_rates(Y, alphas):
    n = Y.shape[1]
    r2 = np.sum(Y ** 2, axis=1)
    out = []
    for a in alphas:
        emp = float(np.mean(r2 >= n * a * a))
        bound = min(1.0, n * np.exp(1.0 - a))
        out.append((a, emp, bound, emp <= float(oracles.binomial_upper(bound, Y.shape[0]))))
    return out


def _whiten(sample, fit):
    mu = fit.mean(axis=0)
    C = np.cov(fit, rowvar=False)
    w, V = np.linalg.eigh(C)
    return (sample - mu) @ V / np.sqrt(w)


def test_criterion_14_logconcave_tail(acceptance, reference):
    cfg, _, frozen = reference
    rng = np.random.default_rng(1414)
    alphas = (2, 4, 6, 8)
    X, Xfit = cfg.env.draw_contexts(100_000, rng), cfg.env.draw_contexts(100_000, rng)
    ctx = _tail_rates(_whiten(X, Xfit), alphas)
    st = frozen["mid"]["1e6"]

    def z_samples(n):
        Xs = cfg.env.draw_contexts(n, rng)
        Q = draw_policies(Xs, st.theta_eta, st.cfg, rng)[0]
        return (Q[:, :, None] * Xs[:, None, :]).reshape(n, -1)

    zt = _tail_rates(_whiten(z_samples(100_000), z_samples(100_000)), alphas)
    ok = all(r[3] for r in ctx + zt)
    detail = ("context " + " ".join(f"a={a}:{e:.2e}<={b:.2e}" for a, e, b, _ in ctx)
              + " | Z_t " + " ".join(f"a={a}:{e:.2e}<={b:.2e}" for a, e, b, _ in zt))
    acceptance.check(14, "log-concave tail bound on whitened samples", ok, detail)
