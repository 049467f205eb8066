"""Matrix Geometric Resampling: a rejection-free estimate of Sigma^{-1}.

One repeat draws N pairs (x_n, q_n) and forms Y_n = diag_a(q_na^2 x_n x_n^T),
the running products Z_n = (I - c Y_1)...(I - c Y_n) and
Sigma_plus = c I + c sum_n Z_n.  Averaging M repeats gives an estimate with
mean Sigma^{-1}(I - (I - c Sigma)^{N+1}).
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .covariance import BlockCovariance
from .sampler import draw_policies

C_STEP = 0.5
DEFAULT_CHUNK = 16384


class MgrError(ValueError):
    pass


@dataclass(frozen=True)
class MgrParams:
    M: int
    N: int
    epsilon: float
    lambda_t: float
    c: float = C_STEP
    M_theorem: int = None
    capped: bool = False

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise MgrError("MGR needs M >= 1 and N >= 1")
        if self.c != C_STEP:
            raise MgrError("MGR step constant is fixed at 1/2")
        if not (self.epsilon > 0 and 0 < self.lambda_t <= 1):
            raise MgrError("need epsilon > 0 and 0 < lambda <= 1")

    @property
    def norm_bound(self):
        """(2/lambda) ln(1/(eps lambda)): the deterministic bound on ||Sigma_plus||."""
        return 2.0 / self.lambda_t * math.log(1.0 / (self.epsilon * self.lambda_t))


def mgr_params(L_hat_prev, dims, epsilon, H=None, max_M=None):
    """Theorem schedule for round t from the lagged cumulative loss.

    lambda = (L+1)^(-1/2), N = ceil((2/lambda) ln(1/(eps lambda))),
    M = ceil(24 ln(d H T)/eps^2 * 4/(lambda^2 ln^2(1/(eps lambda)))).
    ``H`` defaults to T.  With ``max_M`` the repeat count is capped and the
    result is flagged.
    """
    if not 0 < epsilon < 1:
        raise MgrError("epsilon must lie in (0, 1)")
    H = dims.T if H is None else H
    if H < 1:
        raise MgrError("H must be >= 1")
    lam = (max(L_hat_prev, 0.0) + 1.0) ** -0.5
    if epsilon * lam >= 1:
        raise MgrError("epsilon * lambda >= 1 makes the depth non-positive")
    ln_term = math.log(1.0 / (epsilon * lam))
    N = math.ceil(2.0 / lam * ln_term)
    M = math.ceil(24.0 * math.log(dims.d * H * dims.T) / epsilon ** 2 * 4.0 / (lam ** 2 * ln_term ** 2))
    M_full = M
    capped = False
    if max_M is not None and M > max_M:
        M, capped = int(max_M), True
    return MgrParams(M=M, N=N, epsilon=epsilon, lambda_t=lam, M_theorem=M_full, capped=capped)


class MgrAccumulator:
    """Streams pairs through the running products, chunk by chunk."""

    def __init__(self, K, d, params):
        self.params = params
        self.Z = np.zeros((K, d, d))
        self.acc = np.zeros((K, d, d))
        self.total = np.zeros((K, d, d))
        self.count = 0
        self.completed = 0
        self.max_contraction = 0.0

    def feed(self, X, Q):
        done, contraction = kernels.mgr_accumulate(
            X, Q, self.params.c, self.params.N, self.count, self.Z, self.acc, self.total)
        self.count += X.shape[0]
        self.completed += int(done)
        self.max_contraction = max(self.max_contraction, float(contraction))

    def result(self):
        p = self.params
        if self.count != p.M * p.N or self.completed != p.M:
            raise MgrError(f"expected {p.M * p.N} pairs, got {self.count}")
        if self.max_contraction > 1.0 + 1e-12:
            raise MgrError(f"c q^2 |x|^2 = {self.max_contraction} > 1: products are not contractions")
        B = self.total / p.M
        B = 0.5 * (B + np.swapaxes(B, 1, 2))
        info = {"max_contraction": self.max_contraction, "pairs": self.count}
        return BlockCovariance(B, "mgr", self.count, info)


def mgr_inverse(X, Q, params):
    """Sigma_plus from an explicit list of M*N pairs (rows of X and Q), in order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if X.shape[0] != params.M * params.N or Q.shape[0] != X.shape[0]:
        raise MgrError(f"need exactly M*N = {params.M * params.N} pairs, got {X.shape[0]}")
    acc = MgrAccumulator(Q.shape[1], X.shape[1], params)
    acc.feed(X, Q)
    return acc.result()


def mgr_inverse_streaming(env, theta_eta, params, cfg, rng, chunk=DEFAULT_CHUNK):
    """Sigma_plus from M*N fresh pairs drawn in chunks (contexts, then policies)."""
    K, d = np.shape(theta_eta)
    acc = MgrAccumulator(K, d, params)
    remaining = params.M * params.N
    while remaining > 0:
        n = min(chunk, remaining)
        X = env.draw_contexts(n, rng)
        Q = draw_policies(X, theta_eta, cfg, rng)[0]
        acc.feed(X, Q)
        remaining -= n
    return acc.result()


def mgr_expected_value(sigma, c, N):
    """Per block Sigma^{-1}(I - (I - c Sigma)^{N+1})."""
    blocks = sigma.blocks if isinstance(sigma, BlockCovariance) else np.asarray(sigma, float)
    d = blocks.shape[1]
    I = np.eye(d)
    out = np.empty_like(blocks)
    for a, B in enumerate(blocks):
        lmax = np.linalg.eigvalsh(B)[-1]
        if c * lmax >= 1:
            raise MgrError(f"c * lambda_max = {c * lmax} >= 1 in block {a}")
        P = np.linalg.matrix_power(I - c * B, N + 1)
        out[a] = np.linalg.solve(B, I - P)
    return BlockCovariance(0.5 * (out + np.swapaxes(out, 1, 2)), "mgr")


def _opnorm(blocks):
    return float(np.max(np.linalg.norm(blocks, ord=2, axis=(1, 2))))


def mgr_property_check(samples, sigma, params, T):
    """Check the four MGR properties on repeated Sigma_plus draws.

    ``samples``: array (R, K, d, d) of independent Sigma_plus estimates.
    cov_norm1 must hold on every draw; cov_norm2 uses the sample mean; cov_norm3
    and cov_norm4 are empirical frequencies compared with 1 - 2/T^3.
    """
    S = np.asarray(samples, dtype=float)
    blocks = sigma.blocks if isinstance(sigma, BlockCovariance) else np.asarray(sigma, float)
    inv = np.linalg.inv(blocks)
    eps = params.epsilon
    norms = np.array([_opnorm(s) for s in S])
    dev = np.array([_opnorm(s - inv) for s in S])
    prod = np.array([_opnorm(s @ blocks) for s in S])
    mean_dev = _opnorm(S.mean(axis=0) - inv)
    need = 1.0 - 2.0 / T ** 3
    report = {
        "cov_norm1_max": float(norms.max()),
        "cov_norm1_bound": params.norm_bound,
        "cov_norm1_violations": int(np.sum(norms > params.norm_bound * (1 + 1e-12))),
        "cov_norm2": mean_dev,
        "cov_norm3_rate": float(np.mean(dev <= eps)),
        "cov_norm4_rate": float(np.mean(prod <= 1 + 2 * eps)),
        "lambda_min_sigma": float(np.linalg.eigvalsh(blocks)[:, 0].min()),
        "lambda_t": params.lambda_t,
        "repeats": int(S.shape[0]),
    }
    report["cov_norm1_pass"] = report["cov_norm1_violations"] == 0
    report["cov_norm2_pass"] = mean_dev <= eps
    report["cov_norm3_pass"] = report["cov_norm3_rate"] >= need
    report["cov_norm4_pass"] = report["cov_norm4_rate"] >= need
    return report
