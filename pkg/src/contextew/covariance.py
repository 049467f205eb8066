"""Per-arm second-moment blocks Sigma_a = E[Q_a^2 X X^T], their inverses and
the Mahalanobis truncation statistic."""
from dataclasses import dataclass, field

import numpy as np

from .sampler import draw_policies

COND_LIMIT = 1e10
JITTER = 1e-10
SYM_TOL = 1e-12
KINDS = ("sigma", "sigma_tilde", "mgr", "inverse")


class CovarianceError(np.linalg.LinAlgError):
    pass


def invert_block(B):
    """Inverse of a symmetric PSD block, with jitter when ill-conditioned."""
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    scale = max(1.0, float(np.max(np.abs(B))))
    if np.max(np.abs(B - B.T)) > 1e-9 * scale:
        raise CovarianceError("block is not symmetric")
    B = 0.5 * (B + B.T)
    w = np.linalg.eigvalsh(B)
    if w[0] < -1e-10 * max(abs(w[-1]), 1e-300):
        raise CovarianceError(f"block is not positive semi-definite (min eigenvalue {w[0]:.3g})")
    if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
        B = B + JITTER * np.trace(B) / d * np.eye(d)
        if not np.trace(B) > 0:
            raise CovarianceError("block is zero")
    inv = np.linalg.inv(B)
    return 0.5 * (inv + inv.T)


def invert_blocks(blocks):
    """Batched invert_block; raises with the offending block index."""
    blocks = np.asarray(blocks, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (blocks + np.swapaxes(blocks, 1, 2)))
    if np.all(w[:, 0] > 0) and np.all(w[:, -1] / w[:, 0] <= COND_LIMIT):
        inv = np.linalg.inv(blocks)
        return 0.5 * (inv + np.swapaxes(inv, 1, 2))
    out = np.empty_like(blocks)
    for a, B in enumerate(blocks):
        try:
            out[a] = invert_block(B)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(f"block {a}: {exc}") from exc
    return out


@dataclass
class BlockCovariance:
    blocks: np.ndarray
    kind: str
    sample_count: int = 0
    info: dict = field(default_factory=dict)
    _inverse: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ValueError("blocks must have shape (K, d, d)")

    @property
    def K(self):
        return self.blocks.shape[0]

    @property
    def d(self):
        return self.blocks.shape[1]

    @property
    def inverse_blocks(self):
        if self._inverse is None:
            self._inverse = invert_blocks(self.blocks)
        return self._inverse

    def inverse(self):
        return BlockCovariance(self.inverse_blocks, "inverse", self.sample_count)

    def dense(self):
        """Block-diagonal dK x dK matrix."""
        K, d = self.K, self.d
        out = np.zeros((K * d, K * d))
        for a in range(K):
            out[a * d:(a + 1) * d, a * d:(a + 1) * d] = self.blocks[a]
        return out

    def is_symmetric(self, tol=SYM_TOL):
        scale = max(1.0, float(np.max(np.abs(self.blocks))))
        return bool(np.max(np.abs(self.blocks - np.swapaxes(self.blocks, 1, 2))) <= tol * scale)


def second_moment_blocks(X, Q):
    """(1/n) sum_i Q_ia^2 X_i X_i^T for every arm a, symmetrized."""
    X = np.asarray(X, dtype=float)
    Q = np.asarray(Q, dtype=float)
    W = Q * Q
    B = np.stack([(X * W[:, a, None]).T @ X for a in range(Q.shape[1])]) / X.shape[0]
    return 0.5 * (B + np.swapaxes(B, 1, 2))


def estimate_sigma(env, theta_eta, S, cfg, rng, truncated=False, sigma_inv=None,
                   threshold=np.inf, max_rejects=100):
    """Monte-Carlo estimate of Sigma_a (or the truncated Sigma-tilde_a).

    ``theta_eta`` is eta times the cumulative estimate, so costs are
    ``theta_eta @ x``.  Fresh contexts come from ``env``; with
    ``truncated=True`` every policy draw goes through the truncation loop
    with the untruncated inverse blocks ``sigma_inv``.
    """
    d, K = env.dims.d, env.dims.K
    if S < d * K:
        raise ValueError(f"need S >= d*K = {d * K}")
    X = env.draw_contexts(S, rng)
    if truncated:
        if sigma_inv is None:
            raise ValueError("truncated estimate needs the untruncated inverse blocks")
        Q, st, rej, forced = draw_policies(X, theta_eta, cfg, rng, sigma_inv, threshold, max_rejects)
    else:
        Q, st, rej, forced = draw_policies(X, theta_eta, cfg, rng)
    info = {"rejections": int(rej.sum()), "forced": int(forced.sum())}
    kind = "sigma_tilde" if truncated else "sigma"
    return BlockCovariance(second_moment_blocks(X, Q), kind, S, info)


def mahalanobis_stat(q, x, sigma):
    """sum_a q_a^2 x^T Sigma_a^{-1} x for a BlockCovariance (or raw inverse blocks)."""
    inv = sigma.inverse_blocks if isinstance(sigma, BlockCovariance) else np.asarray(sigma, float)
    x = np.asarray(x, dtype=float)
    w = np.einsum("i,aij,j->a", x, inv, x)
    q = np.asarray(q, dtype=float)
    return float(np.sum(q * q * w))


def generalized_eigenvalues(sigma_blocks, sigma_tilde_blocks):
    """Eigenvalues of L^{-1} Sigma-tilde L^{-T} per block, Sigma = L L^T."""
    L = np.linalg.cholesky(np.asarray(sigma_blocks, dtype=float))
    Li = np.linalg.inv(L)
    W = Li @ np.asarray(sigma_tilde_blocks, dtype=float) @ np.swapaxes(Li, 1, 2)
    return np.linalg.eigvalsh(0.5 * (W + np.swapaxes(W, 1, 2)))


def sandwich_check(sigma, sigma_tilde):
    """(min, max) generalized eigenvalue of (Sigma-tilde, Sigma) over all blocks."""
    a = sigma.blocks if isinstance(sigma, BlockCovariance) else sigma
    b = sigma_tilde.blocks if isinstance(sigma_tilde, BlockCovariance) else sigma_tilde
    if np.shape(a) != np.shape(b):
        raise ValueError("covariances differ in shape")
    try:
        ev = generalized_eigenvalues(a, b)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"singular Sigma block: {exc}") from exc
    return float(ev.min()), float(ev.max())
