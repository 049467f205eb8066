"""Normalizing constant of the log-linear density on the simplex.

For costs c the normalizer, with the last coordinate as reference, is

    Z(c) = integral over {q' >= 0, sum q' <= 1} of exp(-<q', c[:-1] - c[-1]>) dq'.

It equals the convolution of the exponentials exp(-(c_a - c_K) q) evaluated at
1, i.e. the inverse Laplace transform of prod_a 1/(s + c_a - c_K).  Grouping
equal rates into poles of multiplicity d_g gives the partial-fraction form

    Z(zeta) = sum_g sum_{j=1..d_g} b_gj zeta^(j-1) exp(-c_g zeta) / (j-1)!.
"""
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.linalg import expm

from .oracles import simplex_quadrature

GROUP_TOL = 1e-9
CONDITION_LIMIT = 1e12

_FACTORIAL = [float(factorial(n)) for n in range(64)]


class ZCalcError(ValueError):
    pass


class IllConditioned(ZCalcError):
    """Raised when the partial-fraction sum cancels catastrophically."""


@dataclass(frozen=True)
class PFGroup:
    cost: float
    multiplicity: int
    coefficients: np.ndarray   # b_{g,1..d_g}


@dataclass(frozen=True)
class PartialFractionTable:
    groups: tuple
    costs: np.ndarray = field(repr=False)   # the (shifted) costs the table was built from

    @property
    def K(self):
        return sum(g.multiplicity for g in self.groups)


def reduce_costs(c):
    """Shift costs by their minimum and find the permutation moving it last.

    Returns ``(shifted, perm, shift)``: ``shifted = c - shift`` in the input
    order, ``shift = min(c)``, and ``perm`` lists the arms with the minimizing
    arm (lowest index on ties) moved to the end, so ``shifted[perm]`` is the
    reduced cost vector with a zero last entry.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ZCalcError("costs must be a non-empty vector")
    if not np.all(np.isfinite(c)):
        raise ZCalcError("costs must be finite")
    r = int(np.argmin(c))
    shift = float(c[r])
    perm = np.array([i for i in range(c.size) if i != r] + [r])
    return c - shift, perm, shift


def unreduce_costs(shifted, shift):
    return np.asarray(shifted, dtype=float) + shift


def _group(costs):
    s = np.sort(np.asarray(costs, dtype=float))[::-1]
    groups = []
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[i] - s[j + 1] <= GROUP_TOL:
            j += 1
        groups.append((float(np.mean(s[i:j + 1])), j - i + 1))
        i = j + 1
    return groups


def partial_fraction_table(costs):
    """Partial-fraction table of prod_a 1/(s + costs_a).

    Coefficient b_gj is the Taylor coefficient of order d_g - j, at the pole
    s = -c_g, of prod_{h != g} (s + c_h)^(-d_h).
    """
    costs = np.asarray(costs, dtype=float)
    grouped = _group(costs)
    out = []
    for g, (cg, dg) in enumerate(grouped):
        coef = np.zeros(dg)
        coef[0] = 1.0
        pref = 1.0
        for h, (ch, dh) in enumerate(grouped):
            if h == g:
                continue
            delta = ch - cg
            pref *= delta ** (-dh)
            k = np.arange(dg)
            # (1 + x/delta)^(-dh) = sum_k binom(-dh, k) (x/delta)^k
            ser = np.cumprod(np.concatenate([[1.0], -(dh + k[1:] - 1.0) / k[1:] / delta]))
            coef = np.convolve(coef, ser)[:dg]
        b = pref * coef[::-1]
        out.append(PFGroup(cg, dg, b))
    return PartialFractionTable(tuple(out), costs)


def _terms(table, zeta):
    terms = []
    for g in table.groups:
        j = np.arange(g.multiplicity)
        fact = np.array([_FACTORIAL[i] for i in j])
        terms.append(g.coefficients * zeta ** j / fact * np.exp(-g.cost * zeta))
    return np.concatenate(terms)


def subsimplex_z(table, zeta):
    """Convolution of the table's exponentials at budget ``zeta`` in [0, 1]."""
    if not 0.0 <= zeta <= 1.0:
        raise ZCalcError("budget must lie in [0, 1]")
    if zeta == 0.0:
        return 1.0 if table.K == 1 else 0.0
    return float(np.sum(_terms(table, zeta)))


def condition_ratio(table, zeta=1.0):
    """max_g,j |b_gj zeta^(j-1) e^(-c_g zeta)/(j-1)!| / Z(zeta)."""
    terms = _terms(table, zeta)
    total = float(np.sum(terms))
    return float(np.max(np.abs(terms)) / total) if total > 0 else np.inf


def z_partial_fraction(c):
    """Z and its partial-fraction table; the last cost is the reference.

    Raises ``IllConditioned`` when the terms cancel beyond the conditioning
    limit; ``z_value`` catches that and uses the stable evaluation instead.
    """
    c = np.asarray(c, dtype=float)
    if c.size < 2:
        raise ZCalcError("need K >= 2 costs")
    if not np.all(np.isfinite(c)):
        raise ZCalcError("costs must be finite")
    table = partial_fraction_table(c - c[-1])
    Z = subsimplex_z(table, 1.0)
    ratio = condition_ratio(table, 1.0)
    if not (Z > 0.0) or ratio > CONDITION_LIMIT:
        raise IllConditioned(f"partial fraction cancels (ratio {ratio:.3g})")
    return Z, table


def z_stable(c, zeta=1.0):
    """Z through the matrix exponential of a bidiagonal matrix.

    exp(zeta*J) with J = diag(-r) + superdiagonal ones has (0, K-1) entry
    zeta^(K-1) times the divided difference of exp at -zeta*r, which is the
    convolution of the exponentials at zeta.  No cancellation occurs when
    rates coincide.
    """
    c = np.asarray(c, dtype=float)
    r = c - c[-1]
    K = r.size
    J = np.diag(-r) + np.diag(np.ones(K - 1), 1)
    shift = r.min()
    return float(np.exp(-shift * zeta) * expm(zeta * (J + shift * np.eye(K)))[0, K - 1])


def z_value(c):
    """Z with automatic fallback; returns ``(Z, used_fallback)``."""
    try:
        Z, _ = z_partial_fraction(c)
        return Z, False
    except IllConditioned:
        return z_stable(c), True


def z_quadrature(c, tol=1e-8):
    """Independent quadrature value of Z (K <= 6)."""
    return simplex_quadrature(c, 1.0, tol)


def log_z(c):
    """ln of the unreduced normalizer  integral over the simplex of exp(-<q, c>)."""
    shifted, perm, shift = reduce_costs(c)
    Z, _ = z_value(shifted[perm])
    return float(np.log(Z) - shift)
