"""Independent brute-force verifiers used by the tests and the self-test CLI.

Nothing here shares arithmetic with the primary code paths: the simplex
integrals use iterated Gauss-Legendre quadrature in collapsed coordinates,
inverses come from a dense LAPACK solve, and the statistical tests are
written against scipy's reference distributions.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------- quadrature

_MAX_POINTS = 4_000_000


def _innermost(rate, upper):
    # closed-form integral of exp(-rate*q) over [0, upper]; vectorized in upper
    if abs(rate) < 1e-300:
        return upper
    return -np.expm1(-rate * upper) / rate


def _gauss_legendre_01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _iterated(rates, zeta, n, first_upper):
    budget = np.array([float(zeta)])
    weight = np.array([1.0])
    if len(rates) == 1:
        top = zeta if first_upper is None else min(first_upper, zeta)
        return float(_innermost(rates[0], np.array([top]))[0])
    x, w = _gauss_legendre_01(n)
    for level, rate in enumerate(rates[:-1]):
        span = budget if (level > 0 or first_upper is None) else np.minimum(budget, first_upper)
        q = span[:, None] * x[None, :]
        weight = (weight * span)[:, None] * w[None, :] * np.exp(-rate * q)
        budget = (budget[:, None] - q).ravel()
        weight = weight.ravel()
    return float(np.sum(weight * _innermost(rates[-1], budget)))


def simplex_quadrature(c, zeta=1.0, tol=1e-10, first_upper=None):
    """Integral of exp(-<q', c[:-1] - c[-1]>) over {q' >= 0 : sum q' <= zeta}.

    The last cost is the reference coordinate.  ``first_upper`` restricts
    the first coordinate to [0, first_upper], which turns the integral into
    an unnormalized marginal CDF.  Node counts double until two successive
    estimates agree to relative tolerance ``tol``.
    """
    c = np.asarray(c, dtype=float)
    K = c.size
    if K < 2:
        raise OracleError("need at least two costs")
    if K > 6:
        raise OracleError("simplex quadrature supports K <= 6")
    if not np.all(np.isfinite(c)):
        raise OracleError("non-finite costs")
    if not 0.0 <= zeta:
        raise OracleError("budget must be non-negative")
    rates = c[:-1] - c[-1]
    if K == 2:
        return _iterated(rates, zeta, 1, first_upper)
    prev = None
    n = 8
    while n ** (K - 2) <= _MAX_POINTS:
        val = _iterated(rates, zeta, n, first_upper)
        if prev is not None and abs(val - prev) <= tol * abs(val):
            return val
        prev = val
        n *= 2
    raise OracleError("quadrature tolerance not reached within the node budget")


def marginal_cdf(c, a, u, tol=1e-10):
    """P(q_a <= u) for the density proportional to exp(-<q, c>) on the simplex."""
    c = np.asarray(c, dtype=float)
    order = [a] + [i for i in range(c.size) if i != a]
    reordered = c[order]
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    total = simplex_quadrature(reordered, 1.0, tol)
    return simplex_quadrature(reordered, 1.0, tol, first_upper=u) / total


def triangle_cell_probabilities(c, edges):
    """Cell probabilities of (q_1, q_2) on a grid for K = 3 via dblquad.

    ``edges`` are the bin edges on [0, 1] for both coordinates; returns a
    square matrix of probabilities under exp(-<q, c>) normalized on the
    triangle q_1 + q_2 <= 1.
    """
    c = np.asarray(c, dtype=float)
    if c.size != 3:
        raise OracleError("grid oracle is for K = 3")
    r1, r2 = c[0] - c[2], c[1] - c[2]

    def dens(y, x):
        return np.exp(-r1 * x - r2 * y)

    def cell(x0, x1, y0, y1):
        if x0 + y0 >= 1.0:
            return 0.0
        xt = min(x1, 1.0 - y0)
        val, _ = integrate.dblquad(dens, x0, xt, lambda x: y0,
                                   lambda x: min(y1, 1.0 - x),
                                   epsabs=1e-13, epsrel=1e-11)
        return val

    m = len(edges) - 1
    P = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            P[i, j] = cell(edges[i], edges[i + 1], edges[j], edges[j + 1])
    return P / P.sum()


# ---------------------------------------------------------------- linear algebra

def dense_inverse(B):
    B = np.asarray(B, dtype=float)
    return np.linalg.solve(B, np.eye(B.shape[-1]))


def matrix_power_series_inverse(sigma, c, N):
    """Sigma^{-1}(I - (I - c Sigma)^{N+1}) through an eigendecomposition."""
    vals, vecs = np.linalg.eigh(np.asarray(sigma, dtype=float))
    f = (1.0 - (1.0 - c * vals) ** (N + 1)) / vals
    return (vecs * f) @ vecs.T


# ---------------------------------------------------------------- Monte Carlo

@dataclass
class MonteCarloEstimate:
    mean: np.ndarray
    se: np.ndarray
    n: int

    def ci95(self):
        return self.mean - 1.96 * self.se, self.mean + 1.96 * self.se

    def within(self, target, k=4.0):
        """Elementwise |mean - target| <= k*se (with a floor for exact zeros)."""
        tol = k * self.se + 1e-12 * np.maximum(1.0, np.abs(target))
        return np.abs(self.mean - target) <= tol


def summarize(samples):
    """MonteCarloEstimate over axis 0 of an array of statistic values."""
    s = np.asarray(samples, dtype=float)
    n = s.shape[0]
    if n < 2:
        raise OracleError("need at least two samples")
    if not np.all(np.isfinite(s)):
        raise OracleError("non-finite statistic")
    return MonteCarloEstimate(s.mean(axis=0), s.std(axis=0, ddof=1) / np.sqrt(n), n)


def mc_moment(draw_fn: Callable, statistic_fn: Callable, n: int, rng) -> MonteCarloEstimate:
    """Mean and standard error of ``statistic_fn(draw_fn(rng))`` over n draws."""
    if n < 2:
        raise OracleError("need n >= 2")
    vals = [np.asarray(statistic_fn(draw_fn(rng)), dtype=float) for _ in range(n)]
    return summarize(np.stack(vals))


def two_sample_ks(a, b):
    """Two-sample Kolmogorov-Smirnov p-value from the asymptotic distribution."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise OracleError("empty sample")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    D = float(np.max(np.abs(fa - fb)))
    en = np.sqrt(a.size * b.size / (a.size + b.size))
    return float(stats.kstwobign.sf(D * en))


def one_sample_ks(sample, cdf):
    """KS p-value of a sample against a vectorized CDF (asymptotic law)."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    D = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    return float(stats.kstwobign.sf(D * np.sqrt(n)))


def chi_square_pvalue(observed, probs, min_expected=5.0):
    """Pearson chi-square p-value, pooling cells with small expected counts."""
    obs = np.asarray(observed, dtype=float).ravel()
    p = np.asarray(probs, dtype=float).ravel()
    n = obs.sum()
    exp = n * p
    order = np.argsort(exp)
    pooled_o, pooled_e = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += obs[i]
        acc_e += exp[i]
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and pooled_e:
        pooled_o[-1] += acc_o
        pooled_e[-1] += acc_e
    pooled_o = np.array(pooled_o)
    pooled_e = np.array(pooled_e)
    if pooled_e.size < 2:
        raise OracleError("too few cells for a chi-square test")
    stat = float(np.sum((pooled_o - pooled_e) ** 2 / pooled_e))
    return float(stats.chi2.sf(stat, pooled_e.size - 1))


def binomial_upper(p, n, sigmas=3.0):
    """p + sigmas * sqrt(p(1-p)/n): an upper allowance for an empirical rate."""
    p = np.asarray(p, dtype=float)
    return p + sigmas * np.sqrt(np.clip(p * (1 - p), 0, None) / n)


def uniform_simplex_second_moment(K):
    """E[q_a^2] for q uniform on the (K-1)-simplex: 2 / (K (K + 1))."""
    return 2.0 / (K * (K + 1))
