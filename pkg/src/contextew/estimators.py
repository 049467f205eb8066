"""Loss-parameter estimators, their cumulative state and Monte-Carlo
diagnostics (ghost-sample identity, unbiasedness and MGR bias)."""
from dataclasses import dataclass, field

import numpy as np

from .covariance import BlockCovariance
from .oracles import summarize
from .sampler import DEFAULT_CONFIG, SamplerConfig, draw_policies


@dataclass(frozen=True)
class EstimatorState:
    cumulative: np.ndarray
    optimistic: np.ndarray
    round: int = 0

    @classmethod
    def zeros(cls, K, d):
        return cls(np.zeros((K, d)), np.zeros((K, d)), 0)


def accumulate(state, theta_hat):
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != state.cumulative.shape:
        raise ValueError("estimate shape does not match the cumulative sum")
    return EstimatorState(state.cumulative + theta_hat, state.optimistic, state.round + 1)


def _inverse_blocks(cov):
    if isinstance(cov, BlockCovariance):
        return cov.blocks if cov.kind in ("inverse", "mgr") else cov.inverse_blocks
    return np.asarray(cov, dtype=float)


def estimate_theta(x, a_played, loss, q_tilde, sigma_tilde_inv, m=None):
    """Row a: m_a + 1{a = played} q_a Sigma-tilde_a^{-1} x (loss - <x, m_a>)."""
    inv = _inverse_blocks(sigma_tilde_inv)
    K, d = inv.shape[0], inv.shape[1]
    x = np.asarray(x, dtype=float)
    m = np.zeros((K, d)) if m is None else np.asarray(m, dtype=float)
    if x.shape != (d,) or m.shape != (K, d) or np.shape(q_tilde) != (K,):
        raise ValueError("dimension mismatch")
    out = m.copy()
    a = int(a_played)
    out[a] = m[a] + q_tilde[a] * (inv[a] @ x) * (loss - x @ m[a])
    return out


def estimate_theta_mgr(x, a_played, loss, q, sigma_hat_plus):
    """Row a: 1{a = played} q_a Sigma_plus_a x loss; other rows zero."""
    P = _inverse_blocks(sigma_hat_plus)
    K, d = P.shape[0], P.shape[1]
    x = np.asarray(x, dtype=float)
    if x.shape != (d,) or np.shape(q) != (K,):
        raise ValueError("dimension mismatch")
    out = np.zeros((K, d))
    a = int(a_played)
    out[a] = q[a] * (P[a] @ x) * loss
    return out


def estimate_theta_batch(X, A, losses, Q, inv_blocks, m=None):
    """Vectorized estimate_theta over n independent rounds -> (n, K, d)."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    K = inv_blocks.shape[0]
    m = np.zeros((K, d)) if m is None else np.asarray(m, dtype=float)
    out = np.broadcast_to(m, (n, K, d)).copy()
    idx = np.arange(n)
    qa = Q[idx, A]
    resid = losses - np.einsum("nd,nd->n", X, m[A])
    out[idx, A] += (qa * resid)[:, None] * np.einsum("nij,nj->ni", inv_blocks[A], X)
    return out


def sample_arms(Q, rng):
    """One categorical draw per row of Q."""
    u = rng.random(Q.shape[0])
    cdf = np.cumsum(Q, axis=1)
    A = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(A, Q.shape[1] - 1)


@dataclass
class FrozenState:
    """Everything a round of ContextEW depends on, held fixed."""
    env: object
    theta: np.ndarray                 # true parameters of the round
    theta_eta: np.ndarray             # eta_t times the cumulative estimate
    sigma: BlockCovariance            # untruncated, used by the truncation test
    sigma_tilde: BlockCovariance      # truncated, used by the estimator
    threshold: float
    m: np.ndarray = None
    cfg: SamplerConfig = DEFAULT_CONFIG
    round: int = 0
    max_rejects: int = 100
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.theta)

    def play(self, n, rng):
        """n independent replays of the round: (X, Q-tilde, A, loss, forced)."""
        X = self.env.draw_contexts(n, rng)
        Q, _, _, forced = draw_policies(X, self.theta_eta, self.cfg, rng, self.sigma.inverse_blocks,
                                        self.threshold, self.max_rejects)
        A = sample_arms(Q, rng)
        losses = np.einsum("nd,nd->n", X, self.theta[A])
        return X, Q, A, losses, forced

    def estimates(self, n, rng):
        X, Q, A, losses, forced = self.play(n, rng)
        return estimate_theta_batch(X, A, losses, Q, self.sigma_tilde.inverse_blocks, self.m)


def _comparator_weights(X, theta, comparator, state, rng):
    n, K = X.shape[0], theta.shape[0]
    if comparator == "best":
        P = np.zeros((n, K))
        P[np.arange(n), np.argmin(X @ theta.T, axis=1)] = 1.0
        return P
    if comparator == "self":
        return draw_policies(X, state.theta_eta, state.cfg, rng)[0]
    return np.asarray(comparator(X), dtype=float)


def ghost_identity_check(state, n_mc, rng, comparator="best"):
    """Both sides of E<Z_t(X_t) - Z*(X_t), theta> = E<Z_t(X_0) - Z*(X_0), theta-hat>.

    ``comparator`` is ``"best"`` (argmin of the round's true losses),
    ``"self"`` (an independent draw of the learner's own policy) or a
    callable mapping contexts (n, d) to comparator weights (n, K).
    Z_t uses the untruncated policy law on both sides.
    """
    theta = np.asarray(state.theta, dtype=float)
    X = state.env.draw_contexts(n_mc, rng)
    Q = draw_policies(X, state.theta_eta, state.cfg, rng)[0]
    P = _comparator_weights(X, theta, comparator, state, rng)
    L = X @ theta.T
    left = np.sum((Q - P) * L, axis=1)

    theta_hat = state.estimates(n_mc, rng)
    X0 = state.env.draw_contexts(n_mc, rng)
    Q0 = draw_policies(X0, state.theta_eta, state.cfg, rng)[0]
    P0 = _comparator_weights(X0, theta, comparator, state, rng)
    Lhat = np.einsum("nd,nkd->nk", X0, theta_hat)
    right = np.sum((Q0 - P0) * Lhat, axis=1)

    lo, hi = summarize(left), summarize(right)
    l_lo, l_hi = lo.ci95()
    r_lo, r_hi = hi.ci95()
    return {
        "left": lo, "right": hi,
        "overlap": bool(l_lo <= r_hi and r_lo <= l_hi),
        "n": n_mc,
    }


def unbiasedness_check(state, n_mc, rng, k=4.0):
    """Componentwise |mean(theta-hat) - theta| <= k * SE over n_mc replays."""
    est = summarize(state.estimates(n_mc, rng))
    ok = est.within(state.theta, k)
    return {"estimate": est, "pass": bool(np.all(ok)), "z": (est.mean - state.theta) / est.se}


def mgr_bias_check(X, A, losses, Q, sigma_plus_draws, theta, X0, k=4.0):
    """Per-arm bias E<X_0, theta_a - theta-hat_a> of the MGR estimator.

    Replay i uses Sigma_plus draw i mod R; the draws are independent of the
    replays, so the mean estimates the bias under the Sigma_plus law.
    Returns the per-arm MonteCarloEstimate of <X_0, theta_a - theta-hat_a>.
    """
    n = X.shape[0]
    R = sigma_plus_draws.shape[0]
    P = sigma_plus_draws[np.arange(n) % R, A]          # (n, d, d)
    idx = np.arange(n)
    K = theta.shape[0]
    est = np.zeros((n, K, X.shape[1]))
    est[idx, A] = (Q[idx, A] * losses)[:, None] * np.einsum("nij,nj->ni", P, X)
    diff = np.einsum("nd,kd->nk", X0, theta) - np.einsum("nd,nkd->nk", X0, est)
    return summarize(diff)
