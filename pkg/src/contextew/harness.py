"""Configuration, the seeded replication runner, CSV output and self-tests.

The config grammar is documented in docs/config.md.  Each replication is a
strictly sequential loop; replications may run in worker processes, and the
aggregate summary is written after all of them finish.
"""
import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import zcalc
from .algorithms import LearnerConfig, MODES, make_learner
from .core import (COLUMNS, ConfigError, DriftingTheta, EnvironmentSpec, FixedTheta,
                   HistoryAdaptive, ProblemDims, TruncatedGaussian, UniformBall, UniformBox,
                   evaluate_loss)
from .rng import Streams
from .sampler import SamplerConfig

WORKERS_ENV = "CONTEXTEW_WORKERS"
SUMMARY_COLUMNS = ("checkpoint", "t", "replications", "mean_regret", "std_regret",
                   "mean_cum_loss", "forced_rounds", "capped_rounds")
FLOAT_FORMAT = "{:.17g}"


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    mode: str
    dims: ProblemDims
    env: EnvironmentSpec
    learner: LearnerConfig
    seed: int = 0
    replications: int = 1
    output: str = "runs/out"
    workers: int = None
    diagnostics_csv: bool = True
    source: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.learner.mode != self.mode:
            raise ConfigError("learner mode differs from run mode")


def _floats(text):
    return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])


def _matrix(text, rows, cols, name):
    vals = _floats(text)
    if vals.size != rows * cols:
        raise ConfigError(f"{name}: expected {rows * cols} numbers, got {vals.size}")
    return vals.reshape(rows, cols)


def _opt_float(sec, key):
    raw = sec.get(key, fallback="").strip()
    if raw == "" or raw.lower() == "none":
        return None
    return float(raw)


def _contexts(sec, d):
    kind = sec.get("contexts", "uniform-ball")
    radius = sec.getfloat("radius", 1.0)
    if kind == "uniform-ball":
        return UniformBall(d, radius)
    if kind == "truncated-gaussian":
        mean = _floats(sec.get("mean", ",".join(["0"] * d)))
        cov_raw = _floats(sec.get("cov", ",".join(["1"] * d)))
        cov = np.diag(cov_raw) if cov_raw.size == d else cov_raw.reshape(d, d)
        return TruncatedGaussian(mean, cov, radius)
    if kind == "uniform-box":
        return UniformBox(_floats(sec["lo"]), _floats(sec["hi"]))
    raise ConfigError(f"unknown context distribution {kind!r}")


def _adversary(sec, K, d):
    kind = sec.get("adversary", "fixed")
    if "theta" not in sec:
        raise ConfigError("[environment] needs theta (K rows of d numbers separated by ';')")
    theta = _matrix(sec["theta"], K, d, "theta")
    if kind == "fixed":
        return FixedTheta(theta)
    if kind == "drifting":
        return DriftingTheta(theta, sec.getfloat("rate", 1e-3))
    if kind == "adaptive":
        direction = sec.get("direction", "").strip()
        return HistoryAdaptive(theta, sec.get("rule", "most-played"), sec.getfloat("magnitude", 1.0),
                               _floats(direction) if direction else None)
    raise ConfigError(f"unknown adversary {kind!r}")


def parse_config(text):
    """RunConfig from INI text (see docs/config.md)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    for name in ("run", "dims", "environment"):
        if name not in cp:
            raise ConfigError(f"missing section [{name}]")
    run, dsec, esec = cp["run"], cp["dims"], cp["environment"]
    ssec = cp["sampler"] if "sampler" in cp else cp[cp.default_section]
    lsec = cp["learner"] if "learner" in cp else cp[cp.default_section]
    try:
        dims = ProblemDims(dsec.getint("d"), dsec.getint("K"), dsec.getint("T"),
                           dsec.getfloat("sigma", 1.0), dsec.getfloat("R", 1.0))
        env = EnvironmentSpec(_contexts(esec, dims.d), _adversary(esec, dims.K, dims.d), dims,
                              esec.getboolean("nonnegative", False), esec.get("name", ""))
        sampler = SamplerConfig(ssec.get("method", "exact"), ssec.getint("hr_steps", 2000),
                                ssec.getint("hr_burnin", 500), ssec.getfloat("inverse_cdf_tol", 1e-10))
        mode = run.get("mode", "contextew-second")
        optimistic = lsec.get("optimistic", "").strip()
        max_M = lsec.get("mgr_max_M", "100000").strip()
        learner = LearnerConfig(
            mode=mode, S=lsec.getint("S", 2000), gamma=_opt_float(lsec, "gamma"),
            max_rejects=lsec.getint("max_rejects", 100), sampler=sampler,
            g_variant=lsec.get("g_variant", "main"),
            optimistic=_matrix(optimistic, dims.K, dims.d, "optimistic") if optimistic else None,
            sandwich_diagnostics=lsec.getboolean("sandwich_diagnostics", True),
            mgr_epsilon=lsec.getfloat("mgr_epsilon", 0.1), mgr_H=_opt_float(lsec, "mgr_H"),
            mgr_max_M=None if max_M.lower() == "none" else int(max_M),
            mgr_lambda_diagnostics=lsec.getboolean("mgr_lambda_diagnostics", True),
            linexp3_explore=lsec.getfloat("linexp3_explore", 0.01),
            linexp3_eta=_opt_float(lsec, "linexp3_eta"))
        workers = run.get("workers", "").strip()
        return RunConfig(mode=mode, dims=dims, env=env, learner=learner,
                         seed=run.getint("seed", 0), replications=run.getint("replications", 1),
                         output=run.get("output", "runs/out"),
                         workers=int(workers) if workers else None,
                         diagnostics_csv=run.getboolean("diagnostics_csv", True),
                         source={s: dict(cp[s]) for s in cp.sections()})
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config value: {exc}") from exc


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def default_workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


# ---------------------------------------------------------------- runner

def run_replication(config, replication, hook=None):
    """One seeded run; returns the finalized RegretTrace.

    ``hook(learner, t, actions)``, if given, is called after every round; it
    must not draw from the learner's streams.
    """
    env, dims = config.env, config.dims
    streams = Streams(config.seed, replication)
    learner = make_learner(dims, env, config.learner, streams)
    trace = learner.trace()
    for t in range(1, dims.T + 1):
        theta = env.theta(t, trace.actions)
        x = env.draw_context(streams.get(t, "context"))
        try:
            arm = learner.act(x)
            loss = evaluate_loss(x, theta, arm)
            learner.feed(loss)
        except Exception as exc:
            raise type(exc)(f"replication {replication}, round {t}: {exc}") from exc
        info = learner.round_info()
        trace.record(x, theta, arm, loss, info.eta, info.rejections, info.forced,
                     info.mgr_capped, info.diagnostics)
        if hook is not None:
            hook(learner, t, trace.actions)
    return trace.finalize()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FORMAT.format(float(v))


def trace_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in trace.rows():
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def diagnostics_csv(trace):
    keys = sorted({k for d in trace.diagnostics for k in d})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t",) + tuple(keys))
    for t, d in enumerate(trace.diagnostics, start=1):
        w.writerow([str(t)] + [_fmt(d[k]) if k in d else "" for k in keys])
    return buf.getvalue()


def checkpoints(T):
    return [("T/4", max(1, T // 4)), ("T/2", max(1, T // 2)), ("T", T)]


def summarize_traces(traces, T):
    """Rows of the aggregate summary (mean and sample std of regret at checkpoints)."""
    rows = []
    for label, t in checkpoints(T):
        reg = np.array([tr.cum_regret[t - 1] for tr in traces])
        loss = np.array([tr.cum_loss[t - 1] for tr in traces])
        std = float(reg.std(ddof=1)) if reg.size > 1 else 0.0
        rows.append((label, t, len(traces), float(reg.mean()), std, float(loss.mean()),
                     int(sum(np.sum(tr.forced[:t]) for tr in traces)),
                     int(sum(np.sum(tr.mgr_capped[:t]) for tr in traces))))
    return rows


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([r[0]] + [_fmt(v) for v in r[1:]])
    return buf.getvalue()


def _write_replication(config, replication):
    trace = run_replication(config, replication)
    out = Path(config.output)
    (out / f"rep_{replication:03d}.csv").write_text(trace_csv(trace))
    if config.diagnostics_csv:
        (out / f"rep_{replication:03d}_diagnostics.csv").write_text(diagnostics_csv(trace))
    return trace


def run(config, workers=None):
    """Run every replication, write per-replication CSVs and summary.csv.

    Returns the list of traces in replication order.
    """
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    n = workers or config.workers or default_workers()
    reps = range(config.replications)
    if n > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            traces = list(pool.map(_write_replication, [config] * config.replications, reps))
    else:
        traces = [_write_replication(config, r) for r in reps]
    (out / "summary.csv").write_text(summary_csv(summarize_traces(traces, config.dims.T)))
    return traces


def read_trace_csv(path):
    """Columns of a per-replication CSV as a dict of numpy arrays."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    if tuple(header) != COLUMNS:
        raise ConfigError(f"{path}: unexpected header {header}")
    return {k: data[:, i] for i, k in enumerate(header)}


# ---------------------------------------------------------------- self-tests

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}"


def z_eval(costs):
    """Z, the partial-fraction table and the quadrature cross-check for one cost vector."""
    c = np.asarray(costs, dtype=float)
    z, fallback = zcalc.z_value(c)
    reduced, perm, shift = zcalc.reduce_costs(c)
    table = zcalc.partial_fraction_table(reduced)
    zq = zcalc.z_quadrature(c)
    rel = abs(z - zq) / zq
    return {"Z": z, "fallback": fallback, "table": table, "shift": shift,
            "Z_quadrature": zq, "rel_error": rel, "pass": rel <= 1e-6}


def random_costs(K, rng, scale=5.0, tie=False):
    c = rng.uniform(-scale, scale, K)
    if tie and K >= 3:
        c[1] = c[0]
        if K >= 4:
            c[3] = c[2] + 1e-12
    return c


def sample_test(Ks=(2, 3, 4), vectors=10, n=50_000, seed=2024, alpha=0.01,
                hr=True, hr_config=None, bins=20):
    """Statistical self-tests of the exact sampler.

    Per cost vector: a chi-square test of the marginal of the lowest-cost
    coordinate against quadrature bin probabilities, and (with ``hr``) a
    two-sample KS test of that marginal between the exact sampler and
    hit-and-run.  Returns a list of CheckResult.
    """
    from . import oracles
    from .sampler import sample_batch
    rng = np.random.default_rng(seed)
    cfg = SamplerConfig()
    hcfg = hr_config or SamplerConfig(method="hit-and-run")
    results = []
    edges = np.linspace(0.0, 1.0, bins + 1)
    for K in Ks:
        for v in range(vectors):
            c = random_costs(K, rng, scale=3.0)
            a = int(np.argmin(c))
            C = np.broadcast_to(c, (n, K))
            Q = sample_batch(C, cfg, rng)
            cdf = np.array([oracles.marginal_cdf(c, a, u) for u in edges])
            obs = np.histogram(Q[:, a], bins=edges)[0]
            p = oracles.chi_square_pvalue(obs, np.diff(cdf))
            name = f"K={K} vector {v} marginal chi-square"
            results.append(CheckResult(name, p > alpha, f"p={p:.4f} costs={np.round(c, 3).tolist()}"))
            if hr:
                H = sample_batch(C, hcfg, rng)
                p2 = oracles.two_sample_ks(Q[:, a], H[:, a])
                results.append(CheckResult(f"K={K} vector {v} exact vs hit-and-run KS", p2 > alpha,
                                           f"p={p2:.4f}"))
    return results


def mgr_test(d=2, K=2, epsilon=0.1, repeats=4000, N_identity=20, seed=7, T=5000):
    """MGR checks on the uniform-ball instance with theta_eta = 0.

    Contexts uniform on the unit ball give E[XX^T] = I/(d+2); policies uniform
    on the simplex give E[q_a^2] = 2/(K(K+1)); hence Sigma_a is exactly
    2/(K(K+1)(d+2)) I.  Checks: the mean identity at depth ``N_identity``,
    cov_norm1 on every draw, and the theorem parameters at ``epsilon`` with
    lambda set to lambda_min(Sigma).
    """
    from . import oracles
    from .mgr import MgrParams, mgr_expected_value, mgr_inverse_streaming, mgr_property_check
    dims = ProblemDims(d, K, T)
    env = EnvironmentSpec(UniformBall(d, 1.0), FixedTheta(np.zeros((K, d))), dims)
    s = 2.0 / (K * (K + 1) * (d + 2))
    sigma = np.broadcast_to(s * np.eye(d), (K, d, d)).copy()
    theta_eta = np.zeros((K, d))
    cfg = SamplerConfig()
    streams = Streams(seed)
    results = []

    p1 = MgrParams(M=1, N=N_identity, epsilon=epsilon, lambda_t=s)
    draws = np.array([mgr_inverse_streaming(env, theta_eta, p1, cfg, streams.get(r, "mgr")).blocks
                      for r in range(repeats)])
    est = oracles.summarize(draws)
    target = mgr_expected_value(sigma, p1.c, p1.N).blocks
    z = np.abs(est.mean - target) / np.where(est.se > 0, est.se, np.inf)
    results.append(CheckResult("mean identity within 4 SE per entry", bool(np.all(z <= 4.0)),
                               f"max |z|={z.max():.2f} N={p1.N} repeats={repeats}"))
    norms = np.linalg.norm(draws, ord=2, axis=(2, 3)).max(axis=1)
    viol = int(np.sum(norms > p1.norm_bound * (1 + 1e-12)))
    results.append(CheckResult("cov_norm1 every draw (identity run)", viol == 0,
                               f"violations={viol} max={norms.max():.3f} bound={p1.norm_bound:.3f}"))

    lam = s
    p2 = MgrParams(M=1, N=math.ceil(2.0 / lam * math.log(1.0 / (epsilon * lam))), epsilon=epsilon,
                   lambda_t=lam)
    draws2 = np.array([mgr_inverse_streaming(env, theta_eta, p2, cfg, streams.get(r, "diagnostic")).blocks
                       for r in range(repeats)])
    rep = mgr_property_check(draws2, sigma, p2, T)
    est2 = oracles.summarize(draws2)
    se_op = float(np.max(est2.se)) * d
    ok2 = rep["cov_norm2"] <= epsilon + 4.0 * se_op
    results.append(CheckResult("theorem parameters: ||mean - Sigma^-1|| <= eps + 4 SE", bool(ok2),
                               f"dev={rep['cov_norm2']:.4f} eps={epsilon} SE={se_op:.4f} N={p2.N}"))
    results.append(CheckResult("cov_norm1 every draw (theorem run)", rep["cov_norm1_pass"],
                               f"violations={rep['cov_norm1_violations']} max={rep['cov_norm1_max']:.2f} "
                               f"bound={rep['cov_norm1_bound']:.2f}"))
    return results


def _advance(config, rounds, seed=None):
    """A contextew learner after ``rounds`` rounds of ``config`` (replication 0)."""
    if not config.mode.startswith("contextew"):
        raise ConfigError("diagnostics need a contextew mode")
    env, dims = config.env, config.dims
    streams = Streams(config.seed if seed is None else seed, 0)
    learner = make_learner(dims, env, config.learner, streams)
    actions = []
    for t in range(1, min(rounds, dims.T - 1) + 1):
        theta = env.theta(t, actions)
        x = env.draw_context(streams.get(t, "context"))
        a = learner.act(x)
        learner.feed(evaluate_loss(x, theta, a))
        actions.append(a)
    return learner, env.theta(learner.t + 1, actions), streams


def diagnose(config, rounds=200, n_mc=20_000, S=20_000, seed=None):
    """Run ``rounds`` rounds of a contextew config, freeze the next round and
    check the ghost identity and the matrix sandwich on it."""
    from .covariance import sandwich_check
    from .estimators import ghost_identity_check
    learner, theta, streams = _advance(config, rounds, seed)
    frozen = learner.freeze(theta, S=S)
    lo, hi = sandwich_check(frozen.sigma, frozen.sigma_tilde)
    g = ghost_identity_check(frozen, n_mc, streams.get(learner.t + 1, "oracle"))
    return [
        CheckResult("matrix sandwich margins in [0.70, 1.40]", 0.70 <= lo and hi <= 1.40,
                    f"min={lo:.4f} max={hi:.4f} round={frozen.round}"),
        CheckResult("ghost identity 95% CIs overlap", g["overlap"],
                    f"left={g['left'].mean:.5f}+-{g['left'].se:.5f} "
                    f"right={g['right'].mean:.5f}+-{g['right'].se:.5f}"),
    ]


def bias_by_samples(config, S_values, rounds=200, n_mc=20_000, seed=None):
    """Empirical estimator bias of one frozen round as a function of S.

    For each Monte-Carlo budget S the round is frozen with S-sample
    covariances and n_mc replays estimate mean(theta-hat) - theta.  Returns
    rows ``(S, max |bias|, max |bias| / SE)``.
    """
    from .oracles import summarize
    learner, theta, streams = _advance(config, rounds, seed)
    rows = []
    for S in S_values:
        frozen = learner.freeze(theta, S=int(S))
        est = summarize(frozen.estimates(n_mc, streams.get(learner.t + 1, "oracle")))
        bias = np.abs(est.mean - frozen.theta)
        rows.append((int(S), float(bias.max()), float((bias / est.se).max())))
    return rows
