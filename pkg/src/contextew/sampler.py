"""Draws from the exponential-weights density p(q) proportional to exp(-<q, c>)
on the probability simplex (optionally clipped to q_a >= floor).

Two methods share one interface.  ``exact`` samples the coordinates
sequentially: q_a given the earlier coordinates has survival function
exp(-c_a u) Z_rest(B - u) / Z_rest(B), where B is the remaining budget and
Z_rest the sub-simplex normalizer of the remaining costs, inverted by a
safeguarded Newton iteration.  ``hit-and-run`` runs a chord-sampling Markov
chain whose one-dimensional conditionals are truncated exponentials.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._backend import kernels

METHODS = {"exact": 0, "hit-and-run": 1}


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "exact"
    hr_steps: int = 2000
    hr_burnin: int = 500
    inverse_cdf_tol: float = 1e-10
    clip_floor: float = 0.0
    exact_max_k: int = 16

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}")
        if not self.hr_steps > self.hr_burnin >= 0:
            raise ValueError("need hr_steps > hr_burnin >= 0")
        if self.clip_floor < 0:
            raise ValueError("clip_floor must be non-negative")
        if self.exact_max_k > kernels.MAX_K:
            raise ValueError(f"exact sampler cap cannot exceed {kernels.MAX_K}")

    def check_k(self, K):
        if self.clip_floor * K >= 1:
            raise ValueError("clip_floor * K must be below 1")
        if self.method == "exact" and K > self.exact_max_k:
            raise ValueError(f"exact sampler limited to K <= {self.exact_max_k}")

    def with_floor(self, floor):
        return SamplerConfig(self.method, self.hr_steps, self.hr_burnin,
                             self.inverse_cdf_tol, floor, self.exact_max_k)

    @property
    def chain_length(self):
        return self.hr_burnin + self.hr_steps


DEFAULT_CONFIG = SamplerConfig()


class TruncatedDraw(NamedTuple):
    q: np.ndarray
    rejections: int
    forced: bool
    statistic: float


def density_unnormalized(q, c):
    return float(np.exp(-np.dot(q, c)))


def sample_batch(C, cfg, rng):
    """One draw per row of the cost matrix ``C`` (shape (n, K))."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    cfg.check_k(C.shape[1])
    if not np.all(np.isfinite(C)):
        raise SamplerError("non-finite costs")
    if cfg.method == "exact":
        try:
            Q, _ = kernels.sample_rows(C, cfg.clip_floor, rng, cfg.inverse_cdf_tol)
        except RuntimeError as exc:
            raise SamplerError(str(exc)) from exc
        return Q
    return kernels.hit_and_run_rows(C, cfg.clip_floor, cfg.chain_length, rng)


def sample_exact(c, rng, cfg=DEFAULT_CONFIG):
    if cfg.method != "exact":
        cfg = SamplerConfig("exact", clip_floor=cfg.clip_floor, inverse_cdf_tol=cfg.inverse_cdf_tol)
    return sample_batch(np.asarray(c, dtype=float)[None, :], cfg, rng)[0]


def sample_hit_and_run(c, cfg, rng):
    if cfg.method != "hit-and-run":
        cfg = SamplerConfig("hit-and-run", cfg.hr_steps, cfg.hr_burnin, clip_floor=cfg.clip_floor)
    return sample_batch(np.asarray(c, dtype=float)[None, :], cfg, rng)[0]


def draw_policies(X, theta_eta, cfg, rng, sigma_inv=None, threshold=np.inf, max_rejects=100):
    """Policy draws Q_i ~ p(. | X_i) with costs theta_eta @ X_i.

    With ``sigma_inv`` (inverse blocks, shape (K, d, d)) each proposal is
    tested against sum_a q_a^2 x^T sigma_inv[a] x <= threshold.  Returns
    ``(Q, statistics, rejections, forced)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    theta_eta = np.asarray(theta_eta, dtype=float)
    cfg.check_k(theta_eta.shape[0])
    if not np.all(np.isfinite(theta_eta)):
        raise SamplerError("non-finite costs")
    try:
        Q, st, rej, forced, _ = kernels.draw_policies(
            X, theta_eta, cfg.clip_floor, sigma_inv, float(threshold), int(max_rejects),
            rng, METHODS[cfg.method], cfg.chain_length, cfg.inverse_cdf_tol)
    except RuntimeError as exc:
        raise SamplerError(str(exc)) from exc
    return Q, st, rej, forced.astype(bool)


def sample_truncated(c, sigma_inv, x, threshold, max_rejects, rng, cfg=DEFAULT_CONFIG):
    """First accepted draw of the truncation loop for one context.

    ``c`` are the costs for context ``x``; ``sigma_inv`` holds the inverse
    untruncated covariance blocks; a proposal q is accepted when
    sum_a q_a^2 x^T sigma_inv[a] x <= threshold (= d K gamma^2).  After
    ``max_rejects`` rejections the last proposal is returned with
    ``forced=True``.
    """
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    sigma_inv = np.asarray(sigma_inv, dtype=float)
    # express the costs through a one-row "context" so the batched kernel can be reused
    K = c.size
    theta_eta = np.zeros((K, x.size + 1))
    theta_eta[:, -1] = c
    Xa = np.concatenate([x, [1.0]])[None, :]
    Si = np.zeros((K, x.size + 1, x.size + 1))
    Si[:, :-1, :-1] = sigma_inv
    Q, st, rej, forced = draw_policies(Xa, theta_eta, cfg, rng, Si, threshold, max_rejects)
    return TruncatedDraw(Q[0], int(rej[0]), bool(forced[0]), float(st[0]))


def truncation_threshold(d, K, gamma):
    return d * K * gamma ** 2
