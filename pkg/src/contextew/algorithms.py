"""Learners behind one interface: ``act(x) -> arm`` then ``feed(loss)``.

Modes
-----
contextew-second  truncated continuous exponential weights, variance-adaptive eta
contextew-first   the same with the loss-adaptive (first-order) eta and m = 0
resampling        exponential weights over the clipped simplex with an MGR inverse
linexp3           discrete exponential weights with implicit exploration
uniform           uniformly random arm
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rates
from .core import RegretTrace
from .covariance import BlockCovariance, estimate_sigma, invert_blocks, sandwich_check
from .estimators import (EstimatorState, FrozenState, accumulate, estimate_theta,
                         estimate_theta_mgr, mgr_bias_check, sample_arms)
from .mgr import mgr_inverse_streaming, mgr_params
from .rng import Streams
from .sampler import DEFAULT_CONFIG, SamplerConfig, draw_policies, truncation_threshold

MODES = ("contextew-second", "contextew-first", "resampling", "linexp3", "uniform")


class LearnerError(RuntimeError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    mode: str = "contextew-second"
    S: int = 2000
    gamma: float = None
    max_rejects: int = 100
    sampler: SamplerConfig = DEFAULT_CONFIG
    g_variant: str = "main"
    optimistic: np.ndarray = None
    sandwich_diagnostics: bool = True
    mgr_epsilon: float = 0.1
    mgr_H: float = None
    mgr_max_M: int = 100_000
    mgr_lambda_diagnostics: bool = True
    linexp3_explore: float = 0.01
    linexp3_eta: float = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.S < 1 or self.max_rejects < 1:
            raise ValueError("S and max_rejects must be positive")
        if not 0 < self.linexp3_explore <= 1:
            raise ValueError("LinExp3 exploration must lie in (0, 1]")


@dataclass
class RoundInfo:
    eta: float = 0.0
    rejections: int = 0
    forced: bool = False
    mgr_capped: bool = False
    diagnostics: dict = field(default_factory=dict)


class Learner:
    """Common plumbing: round counter, streams, cumulative estimate and rates."""

    def __init__(self, dims, env, config, streams):
        self.dims = dims
        self.env = env
        self.config = config
        self.streams = streams if isinstance(streams, Streams) else Streams(int(streams))
        self.t = 0
        self.state = EstimatorState.zeros(dims.K, dims.d)
        self.rates = rates.RateState(gamma=rates.default_gamma(dims))
        self.truncation_gamma = self.rates.gamma if config.gamma is None else float(config.gamma)
        self.info = RoundInfo()
        self._pending = None
        self._trace = RegretTrace(dims.T)
        self.last_sigma = None
        self.last_sigma_tilde = None

    @property
    def mode(self):
        return self.config.mode

    @property
    def gamma(self):
        """Level of the schedules; ``config.gamma`` only moves the truncation level."""
        return self.rates.gamma

    def act(self, x):
        if self._pending is not None:
            raise LearnerError("act() called twice without feed()")
        self.t += 1
        self.info = RoundInfo()
        arm = self._act(np.asarray(x, dtype=float))
        self._pending = (np.asarray(x, dtype=float), arm)
        return arm

    def feed(self, loss):
        if self._pending is None:
            raise LearnerError("feed() called before act()")
        x, arm = self._pending
        self._pending = None
        self._feed(x, arm, float(loss))

    def round_info(self):
        return self.info

    def trace(self):
        """The run's RegretTrace; the runner records each round into it."""
        return self._trace

    def _act(self, x):
        raise NotImplementedError

    def _feed(self, x, arm, loss):
        raise NotImplementedError


class UniformLearner(Learner):
    def _act(self, x):
        return int(self.streams.get(self.t, "play").integers(self.dims.K))

    def _feed(self, x, arm, loss):
        self.rates.update(loss)


class ContextEW(Learner):
    """Truncated continuous exponential weights.

    Per round: eta from the schedule, costs eta <x, Theta-hat_a>, Sigma_t by
    Monte Carlo, a truncated policy draw Q-tilde, arm A ~ Q-tilde, then after
    the loss Sigma-tilde_t by Monte Carlo and the estimate
    m_a + 1{A = a} Q-tilde_a Sigma-tilde_a^{-1} x (loss - <x, m_a>).
    """

    def __init__(self, dims, env, config, streams):
        super().__init__(dims, env, config, streams)
        self.first_order = config.mode == "contextew-first"
        if self.first_order:
            if not env.nonnegative:
                raise LearnerError("first-order mode needs an environment flagged nonnegative")
            self.m = np.zeros((dims.K, dims.d))
        else:
            self.m = np.zeros((dims.K, dims.d)) if config.optimistic is None \
                else np.asarray(config.optimistic, dtype=float)
        self.threshold = truncation_threshold(dims.d, dims.K, self.truncation_gamma)

    def eta_next(self):
        if self.first_order:
            return rates.first_order_eta(self.rates.L_hat, self.dims, self.gamma)
        return rates.second_order_eta(self.rates.V_hat, self.dims, self.gamma, self.config.g_variant)

    def _round_state(self, eta, rng_sigma, rng_tilde, S=None):
        cfg = self.config
        S = cfg.S if S is None else S
        theta_eta = eta * self.state.cumulative
        sigma = estimate_sigma(self.env, theta_eta, S, cfg.sampler, rng_sigma)
        inv = sigma.inverse_blocks
        tilde = None
        if rng_tilde is not None:
            tilde = estimate_sigma(self.env, theta_eta, S, cfg.sampler, rng_tilde, truncated=True,
                                   sigma_inv=inv, threshold=self.threshold,
                                   max_rejects=cfg.max_rejects)
        return theta_eta, sigma, tilde

    def _act(self, x):
        eta = self.rates.push_eta(self.eta_next())
        theta_eta, sigma, _ = self._round_state(eta, self.streams.get(self.t, "sigma"), None)
        rng = self.streams.get(self.t, "play")
        Q, stat, rej, forced = draw_policies(x[None, :], theta_eta, self.config.sampler, rng,
                                             sigma.inverse_blocks, self.threshold,
                                             self.config.max_rejects)
        q = Q[0]
        if not forced[0] and stat[0] > self.threshold:
            raise LearnerError(f"round {self.t}: accepted draw violates the truncation event")
        arm = int(sample_arms(Q, rng)[0])
        self._round = (eta, theta_eta, sigma, q)
        self.last_sigma = sigma
        self.info = RoundInfo(eta=eta, rejections=int(rej[0]), forced=bool(forced[0]),
                              diagnostics={"statistic": float(stat[0]), "q_played": float(q[arm])})
        return arm

    def _feed(self, x, arm, loss):
        eta, theta_eta, sigma, q = self._round
        if self.first_order and loss < -1e-12:
            raise LearnerError(f"round {self.t}: negative loss {loss} in first-order mode")
        cfg = self.config
        tilde = estimate_sigma(self.env, theta_eta, cfg.S, cfg.sampler,
                               self.streams.get(self.t, "sigma_tilde"), truncated=True,
                               sigma_inv=sigma.inverse_blocks, threshold=self.threshold,
                               max_rejects=cfg.max_rejects)
        self.last_sigma_tilde = tilde
        theta_hat = estimate_theta(x, arm, loss, q, tilde.inverse_blocks, self.m)
        self.state = accumulate(self.state, theta_hat)
        self.rates.update(loss, float(x @ self.m[arm]))
        diag = self.info.diagnostics
        diag["tilde_forced"] = tilde.info["forced"]
        if cfg.sandwich_diagnostics:
            lo, hi = sandwich_check(sigma, tilde)
            diag["sandwich_lo"], diag["sandwich_hi"] = lo, hi

    def freeze(self, theta, S=None, purpose="diagnostic", tilde_purpose="diagnostic_tilde"):
        """FrozenState for the upcoming round (t + 1) without advancing the run.

        Covariances are estimated from the ``purpose`` and ``tilde_purpose``
        streams, optionally with a larger sample size ``S``.
        """
        eta = self.eta_next()
        r = self.t + 1
        theta_eta, sigma, tilde = self._round_state(
            eta, self.streams.get(r, purpose), self.streams.get(r, tilde_purpose), S)
        return FrozenState(env=self.env, theta=np.asarray(theta, dtype=float), theta_eta=theta_eta,
                           sigma=sigma, sigma_tilde=tilde, threshold=self.threshold, m=self.m.copy(),
                           cfg=self.config.sampler, round=r, max_rejects=self.config.max_rejects,
                           meta={"eta": eta})


class ResamplingLearner(Learner):
    """Exponential weights over the clipped simplex with an MGR inverse.

    The policy Q is drawn over {q : q_a >= 1/T} without truncation; after the
    arm is drawn, M*N fresh (context, policy) pairs give Sigma_plus and the
    estimate 1{A = a} Q_a Sigma_plus_a x loss.
    """

    def __init__(self, dims, env, config, streams):
        super().__init__(dims, env, config, streams)
        if dims.sigma ** 2 * 0.5 > 1.0 + 1e-12:
            raise LearnerError("MGR needs sigma^2 <= 2 so that every I - cY is a contraction")
        self.cfg = config.sampler.with_floor(1.0 / dims.T)
        self.cfg.check_k(dims.K)
        self.capped_rounds = 0

    def _act(self, x):
        cfg = self.config
        L_prev = self.rates.L_hat
        eta = self.rates.push_eta(rates.resampling_eta(L_prev, self.dims, cfg.g_variant))
        theta_eta = eta * self.state.cumulative
        rng = self.streams.get(self.t, "play")
        Q = draw_policies(x[None, :], theta_eta, self.cfg, rng)[0]
        arm = int(sample_arms(Q, rng)[0])
        params = mgr_params(L_prev, self.dims, cfg.mgr_epsilon, cfg.mgr_H, cfg.mgr_max_M)
        plus = mgr_inverse_streaming(self.env, theta_eta, params, self.cfg,
                                     self.streams.get(self.t, "mgr"))
        norm = float(np.max(np.linalg.norm(plus.blocks, ord=2, axis=(1, 2))))
        if norm > params.norm_bound * (1 + 1e-12):
            raise LearnerError(f"round {self.t}: ||Sigma_plus|| = {norm} exceeds {params.norm_bound}")
        var_term = rates.resampling_variance_term(eta, self.dims, params)
        self.capped_rounds += int(params.capped)
        diag = {"M": params.M, "N": params.N, "M_theorem": params.M_theorem,
                "lambda_t": params.lambda_t, "sigma_plus_norm": norm,
                "sigma_plus_bound": params.norm_bound, "variance_term": var_term,
                "variance_ok": float(var_term <= 0.01), "q_played": float(Q[0, arm])}
        if cfg.mgr_lambda_diagnostics:
            sig = estimate_sigma(self.env, theta_eta, cfg.S, self.cfg,
                                 self.streams.get(self.t, "sigma"))
            diag["lambda_min_sigma"] = float(np.linalg.eigvalsh(sig.blocks)[:, 0].min())
        self._round = (Q[0], plus, params, theta_eta)
        self.last_sigma = plus
        self.info = RoundInfo(eta=eta, mgr_capped=params.capped, diagnostics=diag)
        return arm

    def bias_check(self, theta, n_mc, repeats, rng):
        """Per-arm bias E<X_0, theta_a - theta-hat_a> of the upcoming round's estimator.

        The round (t + 1) is frozen: n_mc replays of (X, Q, A, loss) and
        ``repeats`` independent Sigma_plus draws, cycled across replays.
        """
        eta = rates.resampling_eta(self.rates.L_hat, self.dims, self.config.g_variant)
        theta_eta = eta * self.state.cumulative
        params = mgr_params(self.rates.L_hat, self.dims, self.config.mgr_epsilon,
                            self.config.mgr_H, self.config.mgr_max_M)
        plus = np.array([mgr_inverse_streaming(self.env, theta_eta, params, self.cfg, rng).blocks
                         for _ in range(repeats)])
        X = self.env.draw_contexts(n_mc, rng)
        Q = draw_policies(X, theta_eta, self.cfg, rng)[0]
        A = sample_arms(Q, rng)
        theta = np.asarray(theta, dtype=float)
        losses = np.einsum("nd,nd->n", X, theta[A])
        X0 = self.env.draw_contexts(n_mc, rng)
        return mgr_bias_check(X, A, losses, Q, plus, theta, X0), params

    def _feed(self, x, arm, loss):
        if loss < -1e-12:
            raise LearnerError(f"round {self.t}: negative loss {loss}; the resampling schedule needs losses >= 0")
        q, plus, _, _ = self._round
        self.state = accumulate(self.state, estimate_theta_mgr(x, arm, loss, q, plus))
        self.rates.update(loss)


def linexp3_default_eta(dims):
    """(ln K / (3 d K T sigma^2))^(1/2)."""
    return math.sqrt(math.log(dims.K) / (3.0 * dims.d * dims.K * dims.T * dims.sigma ** 2))


def linexp3_policy(X, cumulative, eta, explore):
    """(1 - explore) softmax(-eta <x, Theta-hat_a>) + explore / K, row per context."""
    z = -eta * (np.atleast_2d(X) @ cumulative.T)
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    K = cumulative.shape[0]
    return (1.0 - explore) * w / w.sum(axis=1, keepdims=True) + explore / K


class LinExp3(Learner):
    """Discrete exponential weights over arms with implicit exploration.

    S_a = E[pi(a|X) X X^T] is estimated by Monte Carlo each round and the
    estimate is 1{A = a} S_a^{-1} x loss.
    """

    def __init__(self, dims, env, config, streams):
        super().__init__(dims, env, config, streams)
        self.eta = linexp3_default_eta(dims) if config.linexp3_eta is None else config.linexp3_eta
        self.explore = config.linexp3_explore

    def _act(self, x):
        eta = self.rates.push_eta(self.eta)
        cum = self.state.cumulative
        rng = self.streams.get(self.t, "play")
        pi = linexp3_policy(x, cum, eta, self.explore)
        arm = int(sample_arms(pi, rng)[0])
        Xs = self.env.draw_contexts(self.config.S, self.streams.get(self.t, "linexp3"))
        P = linexp3_policy(Xs, cum, eta, self.explore)
        Sb = np.einsum("na,ni,nj->aij", P, Xs, Xs) / Xs.shape[0]
        Sb = 0.5 * (Sb + np.swapaxes(Sb, 1, 2))
        inv = invert_blocks(Sb)
        proxy = np.einsum("i,aij,j->a", x, inv, x)
        self._round = inv
        self.info = RoundInfo(eta=eta, diagnostics={
            "variance_proxy_max": float(proxy.max()), "variance_proxy_played": float(proxy[arm]),
            "pi_played": float(pi[0, arm]), "pi_min": float(pi.min())})
        return arm

    def _feed(self, x, arm, loss):
        inv = self._round
        theta_hat = np.zeros((self.dims.K, self.dims.d))
        theta_hat[arm] = inv[arm] @ x * loss
        self.state = accumulate(self.state, theta_hat)
        self.rates.update(loss)


_CLASSES = {
    "contextew-second": ContextEW,
    "contextew-first": ContextEW,
    "resampling": ResamplingLearner,
    "linexp3": LinExp3,
    "uniform": UniformLearner,
}


def make_learner(dims, env, config, streams):
    return _CLASSES[config.mode](dims, env, config, streams)


def with_mode(config, mode, **changes):
    return replace(config, mode=mode, **changes)
